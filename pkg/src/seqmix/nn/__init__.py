from . import autodiff, backend, layers, optim  # noqa: F401
from .autodiff import Tensor, no_grad, parameter  # noqa: F401
from .backend import backend_name, set_backend  # noqa: F401
