from .Adapter import AblationConfig
from .Errors import ConfigurationError


class Variant:
    """
    A model variant of the ablation study
    """
    def __init__(self, func, order : int = 0):
        """
        :param func: Builder returning the variant's AblationConfig
        :param order: Position in the ablation table (lower rows first)
        :type order: int
        """
        self.func = func
        self.order = order
        self.name = func.__doc__.strip() if func.__doc__ else func.__name__

    @property
    def ablation(self) -> AblationConfig:
        return self.func()

    # used for ordering
    def __lt__(self, cmp):
        return self.order < cmp.order

    def __call__(self) -> AblationConfig:
        return self.func()

    def __str__(self):
        return f"Variant {self.name} order({self.order})"


# dictionary of currently available variants, by display name
variants = dict()


def variant(order : int):
    """
    Decorator for simple Variant registration; the docstring is the display name

    :param order: Row of the variant in the ablation table
    :type order: int
    """
    def wrapper(func):
        v = Variant(func, order)
        variants[v.name] = v
        return func
    return wrapper


def get_variant(name : str) -> Variant:
    if name not in variants:
        raise ConfigurationError(f"unknown variant {name!r}, expected one of {', '.join(ordered_names())}")
    return variants[name]


def ordered_variants() -> list[Variant]:
    return sorted(variants.values())


def variant_of(ablation : AblationConfig) -> str:
    """
    Display name of the registered variant with these switches; unregistered
    combinations are named by their set flags
    """
    for v in ordered_variants():
        if v.ablation == ablation:
            return v.name
    return "+".join(name for name, on in ablation.flags().items() if on)


def ordered_names() -> list[str]:
    return [v.name for v in ordered_variants()]


# Ready-Made Variants

@variant(order=0)
def full():
    """full"""
    return AblationConfig()

@variant(order=1)
def without_interaction():
    """w/o ISI"""
    return AblationConfig(disable_isi=True)

@variant(order=2)
def without_visual_enhanced():
    """w/o VESR"""
    return AblationConfig(disable_vesr=True)

@variant(order=3)
def without_sentence_rectified():
    """w/o SRVR"""
    return AblationConfig(disable_srvr=True)

@variant(order=4)
def without_fusion():
    """w/o ISF"""
    return AblationConfig(disable_isf=True)

@variant(order=5)
def without_gate():
    """w/o GM"""
    return AblationConfig(disable_gm=True)

@variant(order=6)
def without_filter():
    """w/o FM"""
    return AblationConfig(disable_fm=True)
