"""Run configuration with range validation and strict JSON loading."""
import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import InvalidArgument


@dataclass(frozen=True)
class RunConfig:
    # tokenization
    h_max: int = 5
    pe_dim: int = 3
    k_feat: int = None
    # encoder
    hidden: int = 512
    heads: int = 8
    layers: int = 1
    ffn_mult: int = 2
    dropout: float = 0.1
    # optimization
    lr: float = 1e-3
    alpha: float = 0.1
    beta: float = 0.1
    margin: float = 0.5
    pretrain_epochs: int = 100
    das_epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-4
    neg_per_node: int = 5
    non_edge_ratio: int = 5
    full_pair_losses: bool = False
    # adaptation
    n_prompts: int = 10
    k_anchors: int = 10
    tau: float = 0.5
    ocd_hidden: int = 64
    eps_bp: float = 1e-5
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.h_max >= 0, "h_max must be >= 0"),
            (self.pe_dim >= 0, "pe_dim must be >= 0"),
            (self.k_feat is None or self.k_feat >= 1, "k_feat must be >= 1"),
            (self.hidden >= 1 and self.heads >= 1, "hidden and heads must be positive"),
            (self.hidden % self.heads == 0, "hidden must be divisible by heads"),
            (self.layers >= 0, "layers must be >= 0"),
            (self.ffn_mult >= 1, "ffn_mult must be >= 1"),
            (0.0 <= self.dropout < 1.0, "dropout must be in [0, 1)"),
            (1e-4 <= self.lr <= 1e-2, "lr must be in [1e-4, 1e-2]"),
            (0.01 <= self.alpha <= 1.0, "alpha must be in [0.01, 1]"),
            (self.beta > 0, "beta must be > 0"),
            (self.margin >= 0, "margin must be >= 0"),
            (self.pretrain_epochs >= 1 and self.das_epochs >= 1, "epoch counts must be >= 1"),
            (self.patience >= 1, "patience must be >= 1"),
            (self.min_delta >= 0, "min_delta must be >= 0"),
            (self.neg_per_node >= 1, "neg_per_node must be >= 1"),
            (self.non_edge_ratio >= 1, "non_edge_ratio must be >= 1"),
            (self.n_prompts >= 1, "n_prompts must be >= 1"),
            (self.k_anchors >= 1, "k_anchors must be >= 1"),
            (0.0 < self.tau <= 1.0, "tau must be in (0, 1]"),
            (self.ocd_hidden >= 1, "ocd_hidden must be >= 1"),
            (self.eps_bp >= 0, "eps_bp must be >= 0"),
            (0.0 <= self.threshold, "threshold must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidArgument(msg)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidArgument(str(e)) from None

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidArgument(f"{path}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise InvalidArgument(f"{path}: config must be a JSON object")
        return cls.from_dict(data)
