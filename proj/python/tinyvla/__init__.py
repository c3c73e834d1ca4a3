"""Toy vision-language-action benchmark: simulator, diffusion/AR/MLP policy
heads over a LoRA-adapted multimodal transformer, and evaluation tools."""

from ._tinyvla import (  # noqa: F401
    Policy,
    SimEnv,
    generate_demos,
    instruction_corpus,
    perturbation_kinds,
    q_sample,
    reconstruct_a0,
    squared_cosine_schedule,
    task_instruction,
    task_names,
    train,
    write_report,
)

__all__ = [
    "Policy",
    "SimEnv",
    "generate_demos",
    "instruction_corpus",
    "perturbation_kinds",
    "q_sample",
    "reconstruct_a0",
    "squared_cosine_schedule",
    "task_instruction",
    "task_names",
    "train",
    "write_report",
]
