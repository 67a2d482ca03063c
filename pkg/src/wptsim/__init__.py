"""Inductive power link and delay-compensated active rectifier simulator."""
