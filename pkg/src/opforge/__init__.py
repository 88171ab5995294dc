"""Reduced-order surrogates for a directed-energy-deposition thermal model.

Modules: ``engine`` (autodiff, FFT, Adam), ``heat_source``, ``thermal``,
``campaign``, ``models``, ``training``, ``sensitivity`` and ``cli``.
"""

__version__ = "0.1.0"
