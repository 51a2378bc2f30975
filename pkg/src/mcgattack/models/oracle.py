"""Black-box target oracles: local, defense-wrapped and remote HTTP.

A :class:`TargetOracle` is the only way attack code observes the target.  Its
single operation, :meth:`TargetOracle.query`, returns a score vector and
charges exactly one unit to the oracle's :class:`~mcgattack.core.QueryLedger`.
Backends that fail (e.g. a remote service that is down) raise before the
ledger is touched, so failures are never billed.
"""

from __future__ import annotations

import base64
import io
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import requests
import torch
import torch.nn.functional as F

from ..core import AttackGoal, QueryLedger, is_success
from ..errors import ConfigError, OracleProtocolError, OracleUnavailable, ShapeError
from ..flowgen.dct import low_pass
from .zoo import Classifier

logger = logging.getLogger(__name__)

PROBS = "probs"
LOGITS = "logits"


class LocalBackend:
    """Scores images with a local model whose weights the attacker never sees."""

    def __init__(self, model: Classifier, output: str = PROBS):
        if output not in (PROBS, LOGITS):
            raise ConfigError(f"output must be {PROBS!r} or {LOGITS!r}")
        self._model = model
        self.output = output
        self.num_classes = model.num_classes
        self.input_shape = model.input_shape

    @torch.no_grad()
    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        if tuple(image.shape) != self.input_shape:
            raise ShapeError(f"oracle expects {self.input_shape}, got {tuple(image.shape)}")
        self._model.eval()
        logits = self._model(image.unsqueeze(0).to(next(self._model.parameters()).dtype)).squeeze(0)
        return F.softmax(logits, -1) if self.output == PROBS else logits


@dataclass(frozen=True)
class DefenseWrapper:
    """Input-transformation defense.

    ``snd`` adds i.i.d. Gaussian noise of std ``sigma``; ``jpeg_dct`` keeps
    the ``keep_fraction`` lowest-frequency DCT coefficients per channel.
    """

    kind: str
    sigma: float = 0.0
    keep_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("snd", "jpeg_dct"):
            raise ConfigError(f"unknown defense {self.kind!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if not 0 < self.keep_fraction <= 1:
            raise ConfigError("keep_fraction must lie in (0, 1]")


def band_limit(image: torch.Tensor, keep_fraction: float) -> torch.Tensor:
    h, w = image.shape[-2:]
    side = math.sqrt(keep_fraction)
    kh, kw = max(1, round(h * side)), max(1, round(w * side))
    return low_pass(image, kh, kw).clamp(0.0, 1.0)


class DefendedBackend:
    def __init__(self, inner, defense: DefenseWrapper):
        self.inner = inner
        self.defense = defense
        self.output = getattr(inner, "output", PROBS)
        self.num_classes = getattr(inner, "num_classes", None)
        self.input_shape = getattr(inner, "input_shape", None)
        self._gen = torch.Generator().manual_seed(defense.seed)

    def transform(self, image: torch.Tensor) -> torch.Tensor:
        d = self.defense
        if d.kind == "snd":
            if d.sigma == 0:
                return image
            noise = torch.randn(image.shape, generator=self._gen, dtype=image.dtype)
            return image + d.sigma * noise
        if d.keep_fraction >= 1.0:
            return image
        return band_limit(image, d.keep_fraction)

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        return self.inner(self.transform(image))


class TargetOracle:
    """Budget-enforced scoring oracle.

    Args:
        backend: callable mapping one ``[C, H, W]`` image to a score vector.
        budget: initial ledger budget.
        output: whether the backend returns probabilities or logits.
    """

    def __init__(self, backend: Callable, budget: int = 10_000, output: Optional[str] = None):
        self.backend = backend
        self.output = output or getattr(backend, "output", PROBS)
        self.ledger = QueryLedger(budget)
        self.observer: Optional[Callable] = None

    @property
    def num_classes(self):
        return getattr(self.backend, "num_classes", None)

    @property
    def input_shape(self):
        return getattr(self.backend, "input_shape", None)

    def reset(self, budget: int) -> QueryLedger:
        """Start a fresh ledger (one per attack episode)."""
        self.ledger = QueryLedger(budget)
        return self.ledger

    def query(self, image: torch.Tensor, goal: Optional[AttackGoal] = None) -> torch.Tensor:
        if self.ledger.exhausted:
            self.ledger.charge()  # raises BudgetExhausted
        scores = self.backend(image.detach())
        scores = torch.as_tensor(scores).detach().to(torch.get_default_dtype())
        self.ledger.charge(is_success(scores, goal) if goal is not None else None)
        if self.observer is not None:
            self.observer(image.detach().clone(), scores.clone())
        return scores

    def log_scores(self, scores: torch.Tensor) -> torch.Tensor:
        """Map returned scores to log-space, where margins are taken."""
        if self.output == LOGITS:
            return scores
        return torch.log(scores.clamp_min(torch.finfo(scores.dtype).tiny))


def local_oracle(model: Classifier, budget: int = 10_000, output: str = PROBS) -> TargetOracle:
    return TargetOracle(LocalBackend(model, output), budget)


def oracle_query(oracle: TargetOracle, x_adv: torch.Tensor, goal: Optional[AttackGoal] = None) -> torch.Tensor:
    return oracle.query(x_adv, goal)


def apply_defense(oracle: TargetOracle, wrapper: DefenseWrapper) -> TargetOracle:
    """Wrap ``oracle``'s backend with ``wrapper``; the result has its own ledger."""
    return TargetOracle(DefendedBackend(oracle.backend, wrapper), oracle.ledger.budget, oracle.output)


# --------------------------------------------------------------------- remote


@dataclass
class RequestMapping:
    """How an image is packed into the JSON request body."""

    image_field: str = "image"
    encoding: str = "png"  # "png" (8-bit, lossy) or "npy" (exact float32)
    extra: Optional[dict] = None


@dataclass
class ScoreMapping:
    """How a JSON response becomes a dense score vector.

    ``mode="dense"`` reads a list of floats at ``field``.  ``mode="topk"``
    reads a list of objects at ``field``, each holding ``label_key`` and
    ``score_key``; labels are looked up in ``classes`` and classes that are
    not listed get score 0.
    """

    mode: str = "dense"
    field: str = "scores"
    classes: Optional[list] = None
    label_key: str = "label"
    score_key: str = "confidence"


def encode_image(image: torch.Tensor, encoding: str) -> str:
    arr = image.detach().cpu().numpy()
    buf = io.BytesIO()
    if encoding == "npy":
        np.save(buf, arr.astype(np.float32), allow_pickle=False)
    elif encoding == "png":
        from PIL import Image

        u8 = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
        u8 = u8[0] if u8.shape[0] == 1 else np.transpose(u8, (1, 2, 0))
        Image.fromarray(u8).save(buf, format="PNG")
    else:
        raise ConfigError(f"unknown image encoding {encoding!r}")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image(payload: str, encoding: str) -> np.ndarray:
    """Inverse of :func:`encode_image`; handy for stub servers."""
    raw = base64.b64decode(payload)
    if encoding == "npy":
        return np.load(io.BytesIO(raw), allow_pickle=False)
    from PIL import Image

    arr = np.asarray(Image.open(io.BytesIO(raw)), dtype=np.float32) / 255.0
    return arr[None] if arr.ndim == 2 else np.transpose(arr, (2, 0, 1))


def _dig(doc, dotted: str):
    for key in dotted.split("."):
        if not isinstance(doc, dict) or key not in doc:
            raise OracleProtocolError(f"response lacks field {dotted!r}")
        doc = doc[key]
    return doc


def map_scores(doc, mapping: ScoreMapping, num_classes: Optional[int] = None) -> torch.Tensor:
    entries = _dig(doc, mapping.field)
    if not isinstance(entries, list):
        raise OracleProtocolError(f"field {mapping.field!r} is not a list")
    try:
        if mapping.mode == "dense":
            vec = torch.tensor([float(v) for v in entries])
        elif mapping.mode == "topk":
            if not mapping.classes:
                raise ConfigError("top-k score mapping needs a class list")
            index = {c: i for i, c in enumerate(mapping.classes)}
            vec = torch.zeros(len(mapping.classes))
            for item in entries:
                label = item[mapping.label_key]
                if label in index:
                    vec[index[label]] = float(item[mapping.score_key])
        else:
            raise ConfigError(f"unknown score mapping mode {mapping.mode!r}")
    except (TypeError, KeyError, ValueError) as exc:
        raise OracleProtocolError(f"malformed score entries: {exc}") from exc
    if vec.numel() == 0 or not torch.isfinite(vec).all():
        raise OracleProtocolError("empty or non-finite score vector")
    if num_classes is not None and vec.numel() != num_classes:
        raise OracleProtocolError(f"expected {num_classes} scores, got {vec.numel()}")
    return vec


class RemoteBackend:
    """POSTs base64-encoded images to an HTTP endpoint and parses JSON scores.

    Connection errors, timeouts and 5xx answers are retried up to
    ``max_retries`` times with exponential backoff; only the final
    successful observation is billed by the owning oracle.
    """

    output = PROBS

    def __init__(
        self,
        url: str,
        request_mapping: Optional[RequestMapping] = None,
        score_mapping: Optional[ScoreMapping] = None,
        num_classes: Optional[int] = None,
        timeout: float = 10.0,
        max_retries: int = 5,
        backoff: float = 0.05,
        session: Optional[requests.Session] = None,
    ):
        self.url = url
        self.request_mapping = request_mapping or RequestMapping()
        self.score_mapping = score_mapping or ScoreMapping()
        if num_classes is None and self.score_mapping.classes:
            num_classes = len(self.score_mapping.classes)
        self.num_classes = num_classes
        self.input_shape = None
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.attempts = 0

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        rm = self.request_mapping
        body = dict(rm.extra or {})
        body[rm.image_field] = encode_image(image, rm.encoding)
        last_error = None
        for attempt in range(self.max_retries + 1):
            self.attempts += 1
            try:
                resp = self.session.post(self.url, json=body, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            else:
                if resp.status_code < 500:
                    break
                last_error = OracleUnavailable(f"HTTP {resp.status_code}")
            if attempt < self.max_retries:
                time.sleep(self.backoff * 2**attempt)
        else:
            raise OracleUnavailable(f"{self.url} unreachable after {self.max_retries + 1} attempts: {last_error}")
        if resp.status_code >= 400:
            raise OracleProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            doc = resp.json()
        except ValueError as exc:
            raise OracleProtocolError("response is not JSON") from exc
        return map_scores(doc, self.score_mapping, self.num_classes)


def remote_oracle(
    url: str,
    request_mapping: Optional[RequestMapping] = None,
    score_mapping: Optional[ScoreMapping] = None,
    budget: int = 10_000,
    **kwargs,
) -> TargetOracle:
    return TargetOracle(RemoteBackend(url, request_mapping, score_mapping, **kwargs), budget)
