"""Order-preserving chunked map used by the lattice kernels."""

from concurrent.futures import ThreadPoolExecutor

_DEFAULT_THREADS = 1


def set_default_threads(k: int) -> None:
    global _DEFAULT_THREADS
    _DEFAULT_THREADS = max(1, int(k))


def default_threads() -> int:
    return _DEFAULT_THREADS


def chunks(n_items: int, size: int):
    size = max(1, int(size))
    return [slice(i, min(i + size, n_items)) for i in range(0, n_items, size)]


def pmap(fn, items, threads=None):
    """``[fn(i) for i in items]`` possibly on a thread pool; output order is fixed."""
    threads = default_threads() if threads is None else max(1, int(threads))
    items = list(items)
    if threads == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
