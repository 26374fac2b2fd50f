"""
Flat key=value experiment configuration.

Files are read with python-dotenv: one `key=value` per line, `#` comments
and blank lines allowed, keys case-insensitive. Unknown keys and malformed
values are reported with the offending line and field.
"""

import hashlib
import io
import logging
import re
from dataclasses import asdict, dataclass, fields, replace

from dotenv import dotenv_values

from src.codec import make_compressor
from src.exceptions import CodecError, ConfigError
from src.protocol import AGE_POLICIES, FETCH_POLICIES, MODES
from src.protocol.client_agent import ANCHOR_CHOICES
from src.scheduler import SAMPLING_MODES

logger = logging.getLogger(__name__)

TASKS = ('logistic', 'quadratic', 'mlp', 'counterexample', 'csv')
POLICIES = ('uniform', 'two_tier')
ACTIVATIONS = ('tanh', 'sigmoid', 'relu')
TUNED = 'tuned'

_TRUE = {'true', '1', 'yes', 'on'}
_FALSE = {'false', '0', 'no', 'off'}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment; every documented key has a default.

    `learning_rate` is a positive number or 'tuned' (step-size rule from
    estimated problem constants).
    """
    run_name: str = 'docofl'
    # task
    task: str = 'logistic'
    dimension: int = 256
    clients: int = 100
    samples_per_client: int = 50
    batch_size: int = 10
    skew: float = 0.0
    shift: float = 0.0
    class_sep: float = 1.0
    reg: float = 1e-3
    condition: float = 10.0
    heterogeneity: float = 1.0
    gradient_noise: float = 0.0
    hidden: int = 16
    activation: str = 'tanh'
    dataset_path: str = ''
    # participation
    per_round: int = 10
    rounds: int = 2000
    policy: str = 'uniform'
    sampling: str = 'iid'
    strong_delay: int = 0
    weak_delay: int = 5
    weak_fraction: float = 0.5
    # protocol
    mode: str = 'docofl'
    learning_rate: str = '0.1'
    anchor_rate: int = 10
    queue_capacity: int = 3
    anchor_codec: str = 'identity'
    correction_codec: str = 'identity'
    gradient_codec: str = 'identity'
    fetch_policy: str = 'notify'
    anchor_choice: str = 'newest'
    max_age: int = 0
    age_policy: str = 'newest'
    download_capacity: int = 0
    strict_anchor: bool = True
    rho_enabled: bool = True
    ignore_correction: bool = False
    server_momentum: float = 0.0
    weight_decay: float = 0.0
    workers: int = 1
    # run
    seed: int = 0
    output_dir: str = 'runs'
    checkpoint_every: int = 0
    log_every: int = 100
    convergence_threshold: float = 1e-3
    probe_points: int = 10

    def __post_init__(self):
        validate(self)

    # ----- Derived values -----

    @property
    def is_tuned(self) -> bool:
        return self.learning_rate.strip().lower() == TUNED

    @property
    def eta(self) -> float:
        """Numeric learning rate; only defined when it is not tuned."""
        if self.is_tuned:
            raise ConfigError("learning rate is tuned at run time", field='learning_rate')
        return float(self.learning_rate)

    @property
    def b_w(self) -> float:
        return make_compressor(self.anchor_codec).bits_per_coordinate

    @property
    def b_c(self) -> float:
        return make_compressor(self.correction_codec).bits_per_coordinate

    @property
    def b_g(self) -> float:
        return make_compressor(self.gradient_codec).bits_per_coordinate

    def with_updates(self, **changes) -> 'ExperimentConfig':
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    # ----- Serialisation -----

    def to_text(self) -> str:
        """Flat key=value text; `parse_config(cfg.to_text()) == cfg`."""
        return ''.join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def fingerprint(self) -> str:
        """Short content hash of the full configuration (seed included)."""
        return hashlib.sha256(self.to_text().encode('utf-8')).hexdigest()[:12]


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name, raw, line):
    kind = FIELD_TYPES[name]
    text = raw.strip()
    try:
        if kind is bool or kind == 'bool':
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"expected true/false, got '{text}'")
        if kind is int or kind == 'int':
            return int(text)
        if kind is float or kind == 'float':
            return float(text)
    except ValueError as e:
        raise ConfigError(str(e), line=line, field=name) from e
    return text


def _key_lines(text):
    lines = {}
    pattern = re.compile(r'^\s*(?:export\s+)?([A-Za-z_][A-Za-z0-9_.-]*)\s*=?')
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        match = pattern.match(line)
        if match:
            lines.setdefault(match.group(1).lower(), number)
    return lines


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse flat key=value text into an ExperimentConfig.

    Raises:
        ConfigError: unknown key, key without value, bad value or an
            inconsistent combination, with line and field where known
    """
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    lines = _key_lines(text)
    params = {}
    for key, raw in values.items():
        name = key.strip().lower()
        line = lines.get(name)
        if name not in FIELD_TYPES:
            raise ConfigError(f"unknown key '{key}'", line=line, field=name)
        if raw is None:
            raise ConfigError("key has no value", line=line, field=name)
        params[name] = _coerce(name, raw, line)
    try:
        return ExperimentConfig(**params)
    except ConfigError as e:
        if e.line is None and e.field in lines:
            raise ConfigError(e.reason, line=lines[e.field], field=e.field) from e
        raise


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    config = parse_config(text)
    logger.info(f"Loaded config {path} (fingerprint {config.fingerprint()})")
    return config


# ============================================================================
# VALIDATION
# ============================================================================

def _require(condition, message, field):
    if not condition:
        raise ConfigError(message, field=field)


def _choice(config, name, allowed):
    value = getattr(config, name)
    _require(value in allowed, f"'{value}' is not one of {', '.join(allowed)}", name)


def validate(config: ExperimentConfig):
    """Field-level and cross-field checks; raises ConfigError naming the field."""
    _choice(config, 'task', TASKS)
    _choice(config, 'policy', POLICIES)
    _choice(config, 'sampling', SAMPLING_MODES)
    _choice(config, 'mode', MODES)
    _choice(config, 'fetch_policy', FETCH_POLICIES)
    _choice(config, 'anchor_choice', ANCHOR_CHOICES)
    _choice(config, 'age_policy', AGE_POLICIES)
    _choice(config, 'activation', ACTIVATIONS)

    _require(config.dimension >= 1, "must be >= 1", 'dimension')
    _require(config.clients >= 1, "must be >= 1", 'clients')
    _require(1 <= config.per_round <= config.clients, f"must lie in [1, {config.clients}]", 'per_round')
    _require(config.rounds >= 1, "must be >= 1", 'rounds')
    _require(config.samples_per_client >= 1, "must be >= 1", 'samples_per_client')
    _require(config.batch_size >= 0, "must be >= 0", 'batch_size')
    _require(0.0 <= config.skew <= 1.0, "must lie in [0, 1]", 'skew')
    _require(config.shift >= 0, "must be >= 0", 'shift')
    _require(config.reg >= 0, "must be >= 0", 'reg')
    _require(config.condition >= 1, "must be >= 1", 'condition')
    _require(config.gradient_noise >= 0, "must be >= 0", 'gradient_noise')
    _require(config.hidden >= 1, "must be >= 1", 'hidden')
    _require(config.task != 'csv' or config.dataset_path, "csv task needs dataset_path", 'dataset_path')

    _require(config.anchor_rate >= 1, "K must be >= 1", 'anchor_rate')
    _require(config.queue_capacity >= 1, "V must be >= 1", 'queue_capacity')
    _require(config.max_age >= 0, "must be >= 0", 'max_age')
    _require(config.download_capacity >= 0, "must be >= 0", 'download_capacity')
    _require(0.0 <= config.server_momentum < 1.0, "must lie in [0, 1)", 'server_momentum')
    _require(config.weight_decay >= 0, "must be >= 0", 'weight_decay')
    _require(config.workers >= 1, "must be >= 1", 'workers')
    _require(config.seed >= 0, "must be >= 0", 'seed')
    _require(config.checkpoint_every >= 0, "must be >= 0", 'checkpoint_every')
    _require(config.log_every >= 0, "must be >= 0", 'log_every')
    _require(config.probe_points >= 10, "at least 10 probe points are needed", 'probe_points')
    _require(0.0 <= config.weak_fraction <= 1.0, "must lie in [0, 1]", 'weak_fraction')
    _require(config.strong_delay >= 0, "must be >= 0", 'strong_delay')
    _require(config.weak_delay >= config.strong_delay, "must be >= strong_delay", 'weak_delay')

    if not config.learning_rate.strip().lower() == TUNED:
        try:
            eta = float(config.learning_rate)
        except ValueError:
            raise ConfigError(f"expected a number or '{TUNED}', got '{config.learning_rate}'",
                              field='learning_rate') from None
        _require(eta >= 0, "must be >= 0", 'learning_rate')

    for name in ('anchor_codec', 'correction_codec', 'gradient_codec'):
        try:
            make_compressor(getattr(config, name))
        except CodecError as e:
            raise ConfigError(str(e), field=name) from e

    # a notified client must still find an anchor no older than K * V
    if config.mode == 'docofl' and config.policy == 'two_tier':
        horizon = config.anchor_rate * (config.queue_capacity - 1) + 1
        _require(config.weak_delay <= horizon,
                 f"notification window exceeds the anchor horizon K*(V-1)+1 = {horizon}", 'weak_delay')
