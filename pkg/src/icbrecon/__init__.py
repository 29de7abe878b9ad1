"""Coupled Bregman iterations with infimal convolutions of TV Bregman distances."""
