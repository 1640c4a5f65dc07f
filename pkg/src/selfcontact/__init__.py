"""Bioimpedance self-contact detection and contact-aware pose refinement."""
