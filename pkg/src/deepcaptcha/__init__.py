"""deepcaptcha: synthetic text-CAPTCHA generation, a from-scratch CNN solver, and solver audits."""

__version__ = "0.1.0"
