import os
from dotenv import load_dotenv

load_dotenv()

ROOT_DIR = os.path.dirname(os.path.abspath(__file__))

# Wavelength grid (nm)
LAMBDA_MIN = 400.0
LAMBDA_MAX = 700.0
LAMBDA_STEP = 10.0

# Diffractive element geometry
GRID_SIZE = 1024            # Height map is GRID_SIZE x GRID_SIZE
PIXEL_PITCH = 4e-6          # meters
PROFILE_LENGTH = 512        # Radial profile entries
DEPTH_MAX = 1.5369e-6       # meters, total etch depth
QUANTIZATION_LEVELS = 16
STEP_ERROR = 40e-9          # meters, per-level fabrication error

# Imaging geometry
SOURCE_DISTANCE = 1.0       # z, meters
FOCAL_LENGTH = 0.050        # f, meters
PSF_CROP = 64
MIN_CROP_ENERGY = 0.99      # Warn when the crop keeps less energy than this

# Fused silica, three-term Sellmeier (wavelength in micrometers)
SELLMEIER_FILE = os.getenv("DPSE_SELLMEIER_FILE") or os.path.join(
    ROOT_DIR, "data", "fused_silica_sellmeier.json"
)
SELLMEIER_RANGE_NM = (300.0, 1000.0)

# Sensor response
RESPONSE_CENTERS_NM = (610.0, 540.0, 470.0)   # R, G, B
RESPONSE_FWHM_NM = 70.0
T_POLARIZER = 1.0           # The analyzer model already carries the 1/2 factor

# Noise
NOISE_SIGMA_FRACTION = 0.01  # Of the clean image's 99th percentile
NOISE_PEAK = 1000.0
SENSOR_BIT_DEPTH = 12

# Reconstruction
DECONV_EPSILON = 1e-3        # Relative to peak |F(P)|^2
REFINE_MAX_BACKTRACKS = 30

# Metrics
PSNR_CAP_DB = 100.0
SSIM_SIGMA = 1.5             # 11x11 Gaussian window
SSIM_K1 = 0.01
SSIM_K2 = 0.03
STOKES_TOLERANCE = 1e-6

# Desk scale (optimizer inner loop)
DESK_GRID_SIZE = 128
DESK_LAMBDA_STEP = 40.0      # 400..680 nm, 8 bands
DESK_LAMBDA_MAX = 680.0
DESK_PATCH_SIZE = 32
DESK_CROP = 16

# Optimizer
OPT_ITERATIONS = 50
OPT_STEP_SIZE = DEPTH_MAX / 50
OPT_BETA1 = 0.9
OPT_BETA2 = 0.999
OPT_MAX_BACKTRACKS = 8
FD_STEP = 1e-9               # meters
FD_PROBES = 16

# Runtime
THREADS = int(os.getenv("DPSE_THREADS", "1"))
LOG_LEVEL = os.getenv("DPSE_LOG_LEVEL", "INFO")
