import os
from pathlib import Path
from dotenv import load_dotenv

# Get project root (one level up from src)
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(dotenv_path=env_path, override=False)

LOG_LEVEL = os.getenv("ANCHORPOSE_LOG_LEVEL", "INFO")

# Anchor grid
STRIDE = int(os.getenv("ANCHORPOSE_STRIDE", "8"))
N_ANCHORS = int(os.getenv("ANCHORPOSE_N_ANCHORS", "10"))

# Inference
SCORE_THRESHOLD = float(os.getenv("ANCHORPOSE_SCORE_THRESHOLD", "0.3"))
NMS_THRESHOLD = float(os.getenv("ANCHORPOSE_NMS_THRESHOLD", "0.5"))

# Evaluation
PCK_THRESHOLD_MM = float(os.getenv("ANCHORPOSE_PCK_THRESHOLD_MM", "150"))
METERS_TO_MM = 1000.0

SEED = int(os.getenv("ANCHORPOSE_SEED", "0"))

if not 0.0 <= SCORE_THRESHOLD < 1.0:
    raise ValueError("ANCHORPOSE_SCORE_THRESHOLD must be in [0, 1)")

if STRIDE < 1 or N_ANCHORS < 1:
    raise ValueError("ANCHORPOSE_STRIDE and ANCHORPOSE_N_ANCHORS must be positive")
