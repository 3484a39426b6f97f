# 模型、网格、源项、诊断与文件读写
