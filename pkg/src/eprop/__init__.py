"""E-prop training of recurrent spiking networks with ALIF, STDP-ALIF and Izhikevich neurons."""

from .network import BroadcastMode, NetworkConfig, init_network
from .neuron import NeuronKind, NeuronParams
from .trainer import RegConfig, TrainConfig, Trainer

__version__ = "0.1.0"
