import os

# Insertable categories offered for recommendation.
DEFAULT_INSERTABLE = [
    "cup",
    "spoon",
    "apple",
    "cake",
    "laptop",
    "mouse",
    "tv",
    "clock",
    "book",
    "pillow",
]

TOP_CONTEXT = 20                # context categories kept in the vocabulary
TOP_RELATIONS = 10              # relations kept in the vocabulary

DETECTION_THRESHOLD = 0.4       # on the max entry of a detection's score vector
MAX_CONTEXT_OBJECTS = 20        # existing objects used per scene

WINDOW_SCALES = (1 / 8, 1 / 16) # window side as a fraction of max(H, W)
STRIDE_RATIO = 0.5              # stride as a fraction of the window side
REFINE_VALUES = 32              # sizes tried when refining the best box
REFINE_MAX_SCALE = 1 / 8        # largest refined side as a fraction of max(H, W)
NORMALIZE_PER_IMAGE = True      # scene retrieval compares normalized P(C|I)

GMM_COMPONENTS = 4
GMM_MAX_ITER = 100
GMM_TOL = 1e-3                  # change of mean per-sample log-likelihood
GMM_REG_COVAR = 1e-6
GMM_SEED = 0
GMM_N_INIT = 1
MIN_SAMPLES_PER_COMPONENT = 5

NDCG_GAIN = "linear"            # or "exponential" (2^rel - 1)
OBJECT_NDCG_KS = (1, 3, 5)
SCENE_NDCG_KS = (1, 10, 20)

MODEL_FORMAT_VERSION = 1

LOG_ENV_VAR = "CONTEXT_INSERT_LOG"
DEFAULT_LOG_LEVEL = "WARNING"
DEFAULT_THREADS = os.cpu_count() or 1

# Synthetic fixtures
SYNTH_IMAGE_WIDTH = 640
SYNTH_IMAGE_HEIGHT = 480
SYNTH_SAMPLES_PER_TRIPLE = 500
SYNTH_TEST_SCENES = 100
SYNTH_NOISE = 0.1
SYNTH_ANNOTATORS = 3
SYNTH_CONTEXT_NAMES = ["wall", "table", "shelf", "desk", "counter", "sofa"]
SYNTH_RELATION_NAMES = ["on", "near", "above", "in front of"]
