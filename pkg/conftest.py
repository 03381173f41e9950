# 项目是平铺布局 (common.py, numerics.py, ... 与 main.py 同级)，
# 测试从仓库根目录导入这些模块。
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
