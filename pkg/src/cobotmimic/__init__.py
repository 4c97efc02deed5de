"""Human-to-cobot motion transfer: demonstrations, adversarial IRL, neuro-symbolic retargeting."""

__version__ = "0.1.0"
