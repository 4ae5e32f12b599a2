"""Configuration settings"""

# Spline grid (clamped uniform knots)
SPLINE_DEGREE = 3
SPLINE_NUM_BASIS = 8
SPLINE_GRID_RANGE = (-2.0, 2.0)

# KAN layer
KAN_RANK_CAP = 8  # rank_p = rank_s = min(cap, d_out, d_in)
KAN_INIT_GAIN = 0.1
KAN_BASIS_SEED = 1729  # fixed basis matrices M_jk
LAYERNORM_EPS = 1e-5

# CKAN operator
CHUNK_PIXELS = 4096

# Generator / discriminator
BASE_CHANNELS = 32
NUM_RESIDUAL_BLOCKS = 4
UPSCALE_FACTOR = 4
HEAD_KERNEL = 3
DISCRIMINATOR_CHANNELS = (16, 16, 32, 64, 64)
DISCRIMINATOR_STRIDES = (1, 2, 2, 2, 2)
DISCRIMINATOR_MIN_SIZE = 16
LEAKY_SLOPE = 0.2

# Perceptual extractor (seeded, not pretrained)
EXTRACTOR_SEED = 20240607
EXTRACTOR_CHANNELS = (8, 16, 32)
EXTRACTOR_MIN_SIZE = 8

# Loss weights
LAMBDA_ADV = 1e-3
LAMBDA_PERC = 1.0
LAMBDA_PIX = 1e-2
PRETRAIN_LAMBDA_PERC = 1e-2
PRETRAIN_LAMBDA_PIX = 1.0

# Optimizer
LEARNING_RATE_G = 1e-4
LEARNING_RATE_D = 1e-4
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Training
EPOCHS = 10
PATCHES_PER_EPOCH = 32
PATCH_SIZE = 64
PSNR_GUARD_DELTA = 0.5  # dB
DISCRIMINATOR_COLLAPSE_LOSS = 1e-4
SEED = 0
SEED_ENV_VAR = "CKAN_SR_SEED"

# Metrics
MAX_PIXEL_VALUE = 1.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# Degradation
BICUBIC_A = -0.5

# Image I/O
PNG_SUPPORT = True  # PPM is always available; PNG goes through Pillow
MANIFEST_NAME = "manifest.txt"

# Checkpoints
CHECKPOINT_MAGIC = b"CKAN"
CHECKPOINT_VERSION = 1
LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
TRAIN_LOG = "train_log.jsonl"
