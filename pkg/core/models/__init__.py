"""
Models and their settings
"""
from .settings import CkanSettings, DataSettings, GeneratorConfig, LossWeights, TrainConfig
from .generator import Generator
from .discriminator import Discriminator

__all__ = [
    'CkanSettings', 'DataSettings', 'GeneratorConfig', 'LossWeights', 'TrainConfig',
    'Generator', 'Discriminator',
]
