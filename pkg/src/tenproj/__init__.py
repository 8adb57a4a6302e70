"""tenproj: a trainable orthogonal tensor-projection layer with analytic
gradients, plus the small CNN stack needed to train and compare it."""

from .gradcheck import GradCheckReport, central_diff_gradient, compare_gradients
from .layer import LayerGradients, TensorProjectionLayer, dvecU_dvecW, orthogonalize
from .linalg import (
    SymEig,
    inv_sqrt_differential,
    inv_sqrt_jacobian_exact,
    inv_sqrt_jacobian_paper,
    inv_sqrt_psd,
    sym_eig,
)
from .models import build_model
from .nn import Network, RMSProp, count_params, softmax_cross_entropy
from .tensor import (
    commutation_matrix,
    fold,
    kmode_product,
    kronecker,
    mode_permutation_matrix,
    unfold,
    vec,
)

__version__ = "0.1.0"

__all__ = [
    "vec", "unfold", "fold", "kmode_product", "kronecker",
    "commutation_matrix", "mode_permutation_matrix",
    "SymEig", "sym_eig", "inv_sqrt_psd", "inv_sqrt_jacobian_exact",
    "inv_sqrt_jacobian_paper", "inv_sqrt_differential",
    "orthogonalize", "dvecU_dvecW", "TensorProjectionLayer", "LayerGradients",
    "Network", "RMSProp", "count_params", "softmax_cross_entropy",
    "build_model",
    "GradCheckReport", "central_diff_gradient", "compare_gradients",
    "__version__",
]
