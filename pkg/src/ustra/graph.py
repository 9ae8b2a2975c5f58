"""Per-frame graph inputs: node embeddings and distance-softmax adjacency."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, ValidationError


@dataclass(frozen=True)
class FrameObservation:
    """Detections for one frame.

    boxes are (N, 4) rows of (x1, y1, x2, y2) in pixels, object_features is
    (N, d_obj), frame_feature is (d_frame,), frame_size is (width, height).
    """

    frame_feature: np.ndarray
    boxes: np.ndarray
    object_features: np.ndarray
    frame_size: tuple = (1.0, 1.0)


@dataclass(frozen=True)
class FrameGraph:
    X: np.ndarray
    A: np.ndarray


def validate_boxes(boxes):
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.ndim < 2 or boxes.shape[-1] != 4:
        raise DimensionError(f"boxes must have a trailing axis of 4, got {boxes.shape}")
    if not np.all(np.isfinite(boxes)):
        raise ValidationError("boxes contain non-finite coordinates")
    if np.any(boxes[..., 0] >= boxes[..., 2]) or np.any(boxes[..., 1] >= boxes[..., 3]):
        raise ValidationError("degenerate box: need x1 < x2 and y1 < y2")
    return boxes


def box_centers(boxes, frame_size):
    """Box centers with coordinates divided by frame width/height."""
    width, height = frame_size
    if width <= 0 or height <= 0:
        raise ValidationError(f"frame size must be positive, got {frame_size}")
    cx = 0.5 * (boxes[..., 0] + boxes[..., 2]) / width
    cy = 0.5 * (boxes[..., 1] + boxes[..., 3]) / height
    return np.stack([cx, cy], axis=-1)


def build_adjacency(boxes, frame_size=(1.0, 1.0)):
    """exp(-d_ij) normalized over all N^2 ordered pairs, self-pairs included.

    ``boxes`` may carry leading batch axes, e.g. (T, N, 4) -> (T, N, N).
    d_ij is the Euclidean distance between normalized box centers.
    """
    boxes = validate_boxes(boxes)
    if boxes.shape[-2] < 1:
        raise ValidationError("need at least one box")
    c = box_centers(boxes, frame_size)
    diff = c[..., :, None, :] - c[..., None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    # Distances lie in [0, sqrt(2)], so exp never underflows; no max-shift.
    w = np.exp(-dist)
    return w / w.sum(axis=(-2, -1), keepdims=True)


def _affine_relu(x, weight, bias):
    return ad.graph_conv(None, x, weight, bias, "relu")


def embed_node_features(obs, object_embed, frame_embed):
    """X = [relu(O W_o + b_o), relu(F W_f + b_f)] with the frame half shared.

    ``object_embed`` / ``frame_embed`` are (weight, bias) pairs of arrays or
    Nodes. Returns a Node when any parameter is a Node, else an array.
    """
    params = (*object_embed, *frame_embed)
    tape = next((p.tape for p in params if isinstance(p, ad.Node)), None)
    as_array = tape is None
    if as_array:
        tape = ad.Tape()
    objs = np.asarray(obs.object_features, dtype=np.float64)
    frame = np.asarray(obs.frame_feature, dtype=np.float64).reshape(1, -1)
    ow, ob = (_shape_of(p) for p in object_embed)
    fw, fb = (_shape_of(p) for p in frame_embed)
    if objs.ndim != 2 or objs.shape[1] != ow[0]:
        raise DimensionError(f"object features {objs.shape} do not match weight {ow}")
    if frame.shape[1] != fw[0]:
        raise DimensionError(f"frame feature {frame.shape} does not match weight {fw}")
    if ow[1] != fw[1]:
        raise DimensionError(f"object and frame embeddings differ in width: {ow[1]} vs {fw[1]}")
    ow_n, ob_n = (_node(p, tape) for p in object_embed)
    fw_n, fb_n = (_node(p, tape) for p in frame_embed)
    obj_e = _affine_relu(tape.constant(objs), ow_n, ob_n)
    frame_e = _affine_relu(tape.constant(frame), fw_n, fb_n)
    x = ad.concat([obj_e, ad.repeat_rows(frame_e, objs.shape[0])], axis=1)
    return x.value if as_array else x


def build_frame_graph(obs, object_embed, frame_embed):
    X = embed_node_features(obs, object_embed, frame_embed)
    return FrameGraph(X=X, A=build_adjacency(obs.boxes, obs.frame_size))


def _shape_of(p):
    return p.value.shape if isinstance(p, ad.Node) else np.shape(p)


def _node(p, tape):
    return p if isinstance(p, ad.Node) else tape.constant(p)
