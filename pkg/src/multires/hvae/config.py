"""Configuration for the dense hierarchical VAE."""

from dataclasses import asdict, dataclass, fields

FOURIER_SITES = ("block", "latent", "heads")
SKIP_MODES = ("sync", "async")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HvaeConfig:
    """Architecture of a dense HVAE.

    Each resolution holds ``blocks`` distinct parameter records, each applied
    ``repeats`` times in a row, so a resolution has ``blocks * repeats``
    encoder blocks and as many decoder cells (one latent layer per cell).
    ``repeats = r`` is the weight-shared rN model; ``blocks = x`` the xN model.
    """

    resolutions: tuple = (16, 4, 1)
    channels: int = 1
    blocks: int = 1
    repeats: int = 1
    latent_channels: int = 2
    hidden_width: int = 32
    residual_cell: bool = True
    normalize_state: bool = False
    skip_mode: str = "async"
    fourier_betas: tuple = ()
    fourier_site: str = "block"

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolutions)
        object.__setattr__(self, "resolutions", res)
        object.__setattr__(self, "fourier_betas", tuple(float(b) for b in self.fourier_betas))
        if not res:
            raise ConfigError("need at least one resolution")
        if any(r < 1 or r & (r - 1) for r in res):
            raise ConfigError(f"resolutions must be powers of two, got {res}")
        if any(b >= a for a, b in zip(res, res[1:])):
            raise ConfigError("resolutions must be strictly decreasing")
        for name in ("channels", "blocks", "repeats", "latent_channels", "hidden_width"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}")
        if self.fourier_site not in FOURIER_SITES:
            raise ConfigError(f"fourier_site must be one of {FOURIER_SITES}")

    @property
    def image_size(self):
        return self.resolutions[0]

    @property
    def pixels(self):
        return self.image_size**2

    @property
    def applications(self):
        return self.blocks * self.repeats

    @property
    def n_layers(self):
        return self.applications * len(self.resolutions)

    @property
    def fourier_factor(self):
        return 1 + 2 * len(self.fourier_betas)

    def state_dim(self, i):
        return self.resolutions[i] ** 2 * self.channels

    def widen(self, site, width):
        """Input width after Fourier features at ``site``."""
        if self.fourier_betas and self.fourier_site == site:
            return width * self.fourier_factor
        return width

    def to_dict(self):
        d = asdict(self)
        d["resolutions"] = list(self.resolutions)
        d["fourier_betas"] = list(self.fourier_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)
