"""Values fixed by hand calculation, kept in one place so the tests quote them consistently."""
import math

GABOR_AT_SIGMA = math.exp(-0.5)  # f=1, theta=0, x=sigma, y=0
SPEC_NCE_ORTHO = -math.log(1.0 / (1.0 + math.exp(-math.pi / 2)))  # ~0.1889, tau_s=1, N=1
GEO_NCE_ANTI = -math.log(math.e / (math.e + math.exp(-1.0)))  # ~0.1269, tau=1, N=1
DISC_HALF = 2.0 * math.log(0.5)  # ~-1.3863 per domain
PSNR_UNIT_MSE = 10.0 * math.log10(255.0 ** 2)  # ~48.1308 dB
RMSE_1_2 = math.sqrt(2.5)  # ~1.5811
TOTAL_ALL_ONES = 3.0

# regression guards recorded from the reference build (8x8, 31 bands, seed 0)
SCENE0_SUM = 780.0746887187127
SCENE0_PIXEL = 0.290343218106941  # band 3, row 2, col 5
# cubic NURBS on clamped uniform knots over [-1, 1] (4 interior), evaluated at 0.3
NURBS_CTRL = (0.0, 1.0, -1.0, 2.0, 0.5, 1.0, 3.0, -2.0)
NURBS_W = (1.0, 2.0, 1.0, 0.5, 1.0, 1.0, 2.0, 1.0)
NURBS_AT_03 = 0.736559139784946
