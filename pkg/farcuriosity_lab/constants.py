"""Module providing shared constants and default hyperparameters for the lab."""

# nnkit
DEFAULT_HIDDEN = 64
DEFAULT_FEATURE_DIM = 64
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
NNKIT_FORMAT_VERSION = 1

# curiosity
RND_LEARNING_RATE = 1e-3
EMA_COEF = 0.99
OBS_CLIP = 5.0
NORMALIZE_FLOOR = 1e-12

# memory
RHO = 10.0
PSI = 0.99
SIM_CAP = 0.75
Z_THRESHOLD = 3.0
WARMUP = 50
LTM_CAPACITY = 800
REFRACTORY = 0
STATE_FORMAT_VERSION = 1

# envs
TOY_WIDTH = 10
TOY_HEIGHT = 10
TOY_OBS_DIM = 32
TOY_FIXED_LENGTH = 200
TOY_INCREASE_FACTOR = 10
TWO_REGION_SIZE = 16
TWO_REGION_BLOCK = 25_000
TOY_RND_HIDDEN = 128
MULTIROOM_T_MAX = 120
MULTIROOM_MIN_ROOM = 4
MULTIROOM_MAX_ROOM = 8
VIEW_SIZE = 7
N_ACTIONS = 7

# agent
PPO_LR = 1e-4
PPO_GAMMA = 0.99
PPO_LAMBDA = 0.95
PPO_CLIP = 0.1
PPO_VALUE_COEF = 1.0
PPO_ENTROPY_COEF = 0.001
PPO_EPOCHS = 4
PPO_MINIBATCHES = 4
PPO_ROLLOUT = 128
PPO_N_ENVS = 8
INTRINSIC_COEF = 1.0

# harness
CSV_SCHEMA_HEADER = "# farcuriosity-lab v1"
PROBE_INTERVAL = 200
DEFAULT_SEEDS = (0, 1, 2)
TOY_DEFAULT_STEPS = 200_000
MULTIROOM_DEFAULT_STEPS = 500_000
DECAY_FACTORS = (0.9990, 0.9995, 1.0000)
SWEEP_RHOS = (5.0, 10.0, 15.0)
SWEEP_PSIS = (0.95, 0.975, 0.99)
THREADS_ENV_VAR = "FARLAB_THREADS"
