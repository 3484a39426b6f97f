# 各方程求解器、时间推进、快照线程与验证研究
