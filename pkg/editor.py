#!/usr/bin/env python3
"""
Declarative edits on a fitted model.

An edit script is JSON: either a list of ops or {"ops": [...]}.

  {"op": "select", "box": [x0, y0, x1, y1]}          # or "polygon": [[x, y], ...]
                   "reference_time": 0.0,              # where means are taken (default 0)
                   "time_window": [t_a, t_b]}          # filter on m_t (optional)
  {"op": "transform", "matrix": [[a, b, tx], [c, d, ty]]}
  {"op": "duplicate", "offset": [dx, dy], "count": 1}
  {"op": "delete"}
  {"op": "override_frame", "frame": k, "ops": [...]}  # edits frame k only

A select with neither box nor polygon selects everything. transform,
duplicate and delete act on the most recent selection; duplicate keeps
the selection on the originals, delete empties it. All coordinates are
normalized image coordinates.

Usage:
  python3 editor.py <checkpoint> <script.json> <out_checkpoint>
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path

from errors import DomainError, EditError
from foldgauss import poly_eval
from model import (
    FlatGaussian, TriangleFace, activated, condition_all, flat_gaussians, frame_times,
    from_triangle, quantize, theta_to_raw, to_triangle,
)

logger = logging.getLogger(__name__)

OP_NAMES = ('select', 'transform', 'duplicate', 'delete', 'override_frame')

# |det| below this (relative to the entries) counts as singular
SINGULAR_TOL = 1e-12


# === Types ===

@dataclass(frozen=True)
class Criteria:
    box: tuple = None
    polygon: tuple = None
    reference_time: float = 0.0
    time_window: tuple = None


@dataclass(frozen=True)
class Selection:
    """Order keys of the selected components."""
    ids: tuple
    criteria: Criteria = field(default_factory=Criteria)

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class EditOp:
    name: str
    args: dict
    ops: tuple = ()


@dataclass(frozen=True)
class EditScript:
    ops: tuple = ()


# === Parsing ===

def _numbers(value, count, what, index):
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise EditError(f"{what} must be a list of numbers", op_index=index)
    if count is not None and len(out) != count:
        raise EditError(f"{what} needs {count} numbers, got {len(out)}", op_index=index)
    if not all(np.isfinite(out)):
        raise EditError(f"{what} must be finite", op_index=index)
    return out


def _parse_op(raw, index, nested):
    if not isinstance(raw, dict) or 'op' not in raw:
        raise EditError("each op must be an object with an 'op' field", op_index=index)
    name = raw['op']
    if name not in OP_NAMES:
        raise EditError(f"unknown op {name!r}", op_index=index)
    args = {}

    if name == 'select':
        if 'box' in raw and 'polygon' in raw:
            raise EditError("select takes a box or a polygon, not both", op_index=index)
        if 'box' in raw:
            args['box'] = _numbers(raw['box'], 4, "box", index)
        if 'polygon' in raw:
            try:
                points = tuple(_numbers(p, 2, "polygon point", index) for p in raw['polygon'])
            except TypeError:
                raise EditError("polygon must be a list of [x, y] points", op_index=index)
            if len(points) < 3:
                raise EditError("polygon needs at least 3 points", op_index=index)
            args['polygon'] = points
        if 'time_window' in raw:
            if nested:
                raise EditError("frame overrides are timeless; select cannot take a time_window",
                                op_index=index)
            ta, tb = _numbers(raw['time_window'], 2, "time_window", index)
            if ta > tb:
                raise EditError(f"time_window [{ta}, {tb}] is reversed", op_index=index)
            args['time_window'] = (ta, tb)
        args['reference_time'] = float(raw.get('reference_time', 0.0))
        if not 0.0 <= args['reference_time'] <= 1.0:
            raise EditError(f"reference_time must be in [0,1], got {args['reference_time']}",
                            op_index=index)

    elif name == 'transform':
        rows = raw.get('matrix')
        if not isinstance(rows, list) or len(rows) != 2:
            raise EditError("matrix must be 2x3", op_index=index)
        args['matrix'] = np.array([_numbers(r, 3, "matrix row", index) for r in rows])

    elif name == 'duplicate':
        args['offset'] = _numbers(raw.get('offset', [0.0, 0.0]), 2, "offset", index)
        count = raw.get('count', 1)
        if not isinstance(count, int) or isinstance(count, bool) or count < 1:
            raise EditError(f"count must be an integer >= 1, got {count!r}", op_index=index)
        args['count'] = count

    elif name == 'override_frame':
        if nested:
            raise EditError("override_frame cannot be nested", op_index=index)
        frame = raw.get('frame')
        if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
            raise EditError(f"frame must be a non-negative integer, got {frame!r}", op_index=index)
        args['frame'] = frame
        nested_ops = raw.get('ops', [])
        if not isinstance(nested_ops, list):
            raise EditError("override_frame ops must be a list", op_index=index)
        try:
            inner = _parse_ops(nested_ops, nested=True)
        except EditError as e:
            raise EditError(f"in override_frame: {e}", op_index=index)
        return EditOp(name, args, inner)

    return EditOp(name, args)


def _parse_ops(raw_ops, nested=False):
    ops = []
    selected = False
    for i, raw in enumerate(raw_ops):
        op = _parse_op(raw, i, nested)
        if op.name == 'select':
            selected = True
        elif op.name in ('transform', 'duplicate', 'delete') and not selected:
            raise EditError(f"{op.name} needs a preceding select", op_index=i)
        ops.append(op)
    return tuple(ops)


def parse_script(source):
    """EditScript from JSON text or an already-decoded list/dict."""
    if isinstance(source, (str, bytes)):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as e:
            raise EditError(f"invalid JSON: {e}")
    if isinstance(source, dict):
        source = source.get('ops')
    if not isinstance(source, list):
        raise EditError("script must be a list of ops or an object with an 'ops' list")
    return EditScript(_parse_ops(source))


def load_script(path):
    with open(path) as f:
        return parse_script(f.read())


# === Selection ===

def _in_region(points, criteria):
    if criteria.box is not None:
        x0, y0, x1, y1 = criteria.box
        return ((points[:, 0] >= x0) & (points[:, 0] <= x1)
                & (points[:, 1] >= y0) & (points[:, 1] <= y1))
    if criteria.polygon is not None:
        if len(points) == 0:
            return np.zeros(0, dtype=bool)
        return Path(np.asarray(criteria.polygon)).contains_points(points)
    return np.ones(len(points), dtype=bool)


def select(model, criteria):
    """Components whose mean at criteria.reference_time is in the region and whose m_t is in the window."""
    a = activated(model)
    means = a['m_s'] + poly_eval(a['poly'], a['m_t'] - criteria.reference_time)
    mask = _in_region(means, criteria)
    if criteria.time_window is not None:
        ta, tb = criteria.time_window
        mask &= (a['m_t'] >= ta) & (a['m_t'] <= tb)
    return Selection(tuple(int(k) for k in model.order_key[mask]), criteria)


def select_all(model):
    return Selection(tuple(int(k) for k in model.order_key))


def select_scene(scene, criteria):
    mask = _in_region(scene.means, criteria)
    return Selection(tuple(int(k) for k in scene.order_key[mask]), criteria)


# === Edits ===

def _check_matrix(M):
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 3) or not np.all(np.isfinite(M)):
        raise EditError(f"transform matrix must be a finite 2x3, got shape {M.shape}")
    L = M[:, :2]
    if abs(np.linalg.det(L)) <= SINGULAR_TOL * max(1.0, np.abs(L).max() ** 2):
        raise EditError("transform matrix has a singular linear part")
    return M


def _is_identity(M):
    return np.array_equal(M, np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))


def _move_flat(flat, M, component_id):
    """Apply M to the triangle face of a flat Gaussian and rebuild it."""
    face = to_triangle(flat)
    L, b = M[:, :2], M[:, 2]

    def move(p):
        q = L @ np.asarray(p[:2]) + b
        return (float(q[0]), float(q[1]), 0.0)

    moved = TriangleFace(m=move(face.m), v1=move(face.v1), v2=move(face.v2))
    return from_triangle(moved, component_id=component_id)


def transform_affine(model, sel, M):
    """Move, rotate and scale the selected components through their triangle faces.

    Polynomial shift vectors follow M's linear part; m_t, sigma_t, opacity
    and colour are unchanged.
    """
    M = _check_matrix(M)
    out = model.copy()
    if _is_identity(M) or not len(sel):
        return out
    rows = model.rows_for(sel.ids)
    L = M[:, :2]
    p = out.params
    for row, flat in zip(rows, flat_gaussians(model, rows)):
        moved = _move_flat(flat, M, int(model.order_key[row]))
        p['m_s'][row] = moved.m
        p['log_s'][row] = (np.log(moved.s1), np.log(moved.s2))
        p['theta_raw'][row] = theta_to_raw(moved.theta)
        p['poly'][row] = L @ p['poly'][row]
    for name in ('m_s', 'log_s', 'theta_raw', 'poly'):
        p[name] = quantize(p[name])
    logger.info("transformed %d components", len(rows))
    return out


def duplicate(model, sel, offset, count=1):
    """Append `count` copies of the selection, copy j shifted by j * offset."""
    if count < 1:
        raise EditError(f"count must be >= 1, got {count}")
    rows = model.rows_for(sel.ids)
    if not len(rows):
        return model.copy()
    offset = np.asarray(offset, dtype=float)
    blocks = []
    for j in range(1, count + 1):
        block = {k: v[rows].copy() for k, v in model.params.items()}
        block['m_s'] = quantize(block['m_s'] + j * offset)
        blocks.append(block)
    fresh = {k: np.concatenate([b[k] for b in blocks]) for k in model.params}
    return model.append(fresh)


def delete(model, sel):
    if not len(sel):
        return model.copy()
    return model.take(~np.isin(model.order_key, np.asarray(sel.ids, dtype=np.int64)))


# === Overlays ===

def _scene_rows(scene, sel):
    return np.nonzero(np.isin(scene.order_key, np.asarray(sel.ids, dtype=np.int64)))[0]


def transform_scene(scene, sel, M):
    M = _check_matrix(M)
    out = scene.copy()
    if _is_identity(M):
        return out
    for row in _scene_rows(scene, sel):
        flat = FlatGaussian(tuple(scene.means[row]), float(scene.theta[row]),
                            float(scene.s1[row]), float(scene.s2[row]))
        moved = _move_flat(flat, M, int(scene.order_key[row]))
        out.means[row] = moved.m
        out.theta[row] = moved.theta
        out.s1[row] = moved.s1
        out.s2[row] = moved.s2
    return out


def duplicate_scene(scene, sel, offset, count=1):
    rows = _scene_rows(scene, sel)
    if not len(rows):
        return scene.copy()
    out = scene
    next_key = int(scene.order_key.max()) + 1
    for j in range(1, count + 1):
        block = scene.subset(rows)
        block.means = block.means + j * np.asarray(offset, dtype=float)
        block.order_key = np.arange(next_key, next_key + len(rows), dtype=np.int64)
        block.source = np.full(len(rows), -1, dtype=np.int64)
        next_key += len(rows)
        out = out.concat(block)
    return out


def delete_scene(scene, sel):
    return scene.subset(~np.isin(scene.order_key, np.asarray(sel.ids, dtype=np.int64)))


def _run_scene_ops(scene, ops):
    sel = None
    for i, op in enumerate(ops):
        try:
            if op.name == 'select':
                sel = select_scene(scene, Criteria(box=op.args.get('box'),
                                                   polygon=op.args.get('polygon')))
            elif op.name == 'transform':
                scene = transform_scene(scene, sel, op.args['matrix'])
            elif op.name == 'duplicate':
                scene = duplicate_scene(scene, sel, op.args['offset'], op.args['count'])
            elif op.name == 'delete':
                scene = delete_scene(scene, sel)
                sel = Selection(())
        except EditError as e:
            raise EditError(f"nested op {i}: {e}")
    return scene


def override_frame(model, k, ops=()):
    """Bake frame k into a static overlay and apply `ops` to it.

    Renders at exactly t_k use the overlay; every other time uses the model.
    An existing overlay for k is edited further rather than re-baked.
    """
    if not 0 <= k < model.n_frames:
        raise EditError(f"frame {k} out of range for {model.n_frames} frames")
    for op in ops:
        if op.name == 'select' and op.args.get('time_window') is not None:
            raise EditError("frame overrides are timeless; select cannot take a time_window")
        if op.name == 'override_frame':
            raise EditError("override_frame cannot be nested")
    out = model.copy()
    if k in out.overlays:
        base = out.overlays[k]
    else:
        base = condition_all(model, frame_times(model.timeline)[k], cull=False)
    out.overlays[k] = _run_scene_ops(base, ops)
    logger.info("frame %d overridden (%d overlay Gaussians)", k, len(out.overlays[k]))
    return out


def scene_at(model, t, cull=True, size=None):
    """The scene to render at time t: the overlay at an overridden key time, else the model slice."""
    if model.overlays:
        times = frame_times(model.timeline)
        for k, overlay in model.overlays.items():
            if times[k] == t:
                return overlay
    return condition_all(model, t, cull=cull, size=size)


# === Scripts ===

def _criteria(args):
    return Criteria(box=args.get('box'), polygon=args.get('polygon'),
                    reference_time=args.get('reference_time', 0.0),
                    time_window=args.get('time_window'))


def apply_script(model, script):
    """Apply every op in order. On any failure the input model is left untouched."""
    work = model.copy()
    sel = None
    for i, op in enumerate(script.ops):
        try:
            if op.name == 'select':
                sel = select(work, _criteria(op.args))
            elif op.name == 'transform':
                work = transform_affine(work, sel, op.args['matrix'])
            elif op.name == 'duplicate':
                work = duplicate(work, sel, op.args['offset'], op.args['count'])
            elif op.name == 'delete':
                work = delete(work, sel)
                sel = Selection(())
            elif op.name == 'override_frame':
                work = override_frame(work, op.args['frame'], op.ops)
        except EditError as e:
            if e.op_index is not None:
                raise
            raise EditError(str(e), op_index=i) from e
        except (DomainError, ValueError) as e:
            raise EditError(str(e), op_index=i) from e
    return work


if __name__ == '__main__':
    import sys

    from video_io import load_checkpoint, save_checkpoint

    if len(sys.argv) != 4:
        print(__doc__)
        sys.exit(1)

    model = load_checkpoint(sys.argv[1])
    edited = apply_script(model, load_script(sys.argv[2]))
    save_checkpoint(edited, sys.argv[3])
    print(f"  → {len(model)} -> {len(edited)} components, {len(edited.overlays)} overlays")
