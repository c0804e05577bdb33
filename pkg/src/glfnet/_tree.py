"""Walk nested frozen dataclasses / tuples of Tensors by dotted name."""

import dataclasses

from .autodiff import Tensor


def named_tensors(obj, prefix=""):
    """Flatten ``obj`` into an ordered ``{dotted.name: Tensor}`` dict."""
    out = {}
    _collect(obj, prefix, out)
    return out


def _collect(obj, prefix, out):
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            _collect(getattr(obj, f.name), _join(prefix, f.name), out)
    elif isinstance(obj, (tuple, list)):
        for i, item in enumerate(obj):
            _collect(item, _join(prefix, str(i)), out)


def replace_tensors(obj, mapping, prefix=""):
    """Copy of ``obj`` with every Tensor whose name is in ``mapping`` swapped."""
    if isinstance(obj, Tensor):
        return mapping.get(prefix, obj)
    if dataclasses.is_dataclass(obj):
        changes = {}
        for f in dataclasses.fields(obj):
            old = getattr(obj, f.name)
            new = replace_tensors(old, mapping, _join(prefix, f.name))
            if new is not old:
                changes[f.name] = new
        return dataclasses.replace(obj, **changes) if changes else obj
    if isinstance(obj, (tuple, list)):
        items = [replace_tensors(item, mapping, _join(prefix, str(i))) for i, item in enumerate(obj)]
        if all(a is b for a, b in zip(items, obj)):
            return obj
        return type(obj)(items)
    return obj


def _join(prefix, name):
    return f"{prefix}.{name}" if prefix else name
