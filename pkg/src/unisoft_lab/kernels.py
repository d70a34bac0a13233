"""Backend selection: compiled kernels when importable, numpy otherwise."""
from . import _kernels_py as python_backend

try:
    from . import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if compiled_backend is not None else "python"

NOISE_CODES = {
    "bernoulli": python_backend.NOISE_BERNOULLI,
    "gaussian": python_backend.NOISE_GAUSSIAN,
    "deterministic": python_backend.NOISE_DETERMINISTIC,
}


def get_backend(name: str | None = None):
    """``None``/"auto" picks the fastest available; "python" or "compiled" force one."""
    if name in (None, "auto"):
        return backend
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not available in this installation")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")


def backend_name(module) -> str:
    return "python" if module is python_backend else "compiled"
