"""Instruction pools and the description-overlap judging template.

``★`` marks where the comma-joined label set is substituted.
"""

from __future__ import annotations

import numpy as np

STAR = "★"

RECOGNITION_POOL = (
    "Please determine which emotion label in the video represents: ★.",
    "Identify the displayed emotion in the video: is it ★?",
    "Determine the emotional state shown in the video, choosing from ★.",
    "Please ascertain the specific emotion portrayed in the video, whether it be ★.",
    "Assess and label the emotion evident in the video: could it be ★?",
    "Given the input video and audio, your task is to identify the emotion expressed by the "
    "person or people in the video. Your output must be only one emotion label strictly chosen "
    "from the following list:★.",
    "Please classify the observed emotional state in the video using one of the following:★",
    "Based on the visual and audio content of the video, identify the emotion expressed by the "
    "person. Choose one label from:★",
    "Analyze the video and assign one of the following emotion labels to the person depicted:★",
    "After watching the video, decide which of the following emotions is being expressed:★",
)

REASONING_POOL = (
    "The possible emotions are: ★. Based on what you see and hear in the video, including facial "
    "expressions, gestures, vocal tone, and spoken words, identify the emotion the person is "
    "expressing and explain which clues led to your conclusion.",
    "Choose one emotion from the following list: ★. Watch the video and use both visual signals, "
    "such as facial expressions and body movements, and auditory signals, such as tone and "
    "intonation, to infer the person’s emotional state. Please describe your reasoning process "
    "clearly.",
    "You are given a video containing both visual and audio information. The possible emotion "
    "categories are: ★. First, analyze the video by reasoning through facial expressions, "
    "gestures, tone of voice, and spoken content. Write your reasoning inside the <think> and "
    "</think> tags. Then select the most appropriate emotion and place it inside the <answer> and "
    "</answer> tags.",
    "Watch the video and consider all visual and auditory clues, including facial expressions, "
    "body movements, voice pitch, tempo, and speech content. The emotion must be one of: ★. Use "
    "<think> to explain your reasoning step by step, and then provide the final emotion label in "
    "<answer>.",
    "Analyze the multimodal signals in the video. The goal is to infer the person’s emotional "
    "state from the following options: ★. In the <think> section, describe how the visual and "
    "audio evidence supports your reasoning. Then output the most likely emotion label in "
    "<answer>.",
)

POOLS = {"recognition": RECOGNITION_POOL, "reasoning": REASONING_POOL}

ACTUAL_SLOT = "<description annotation>"
PREDICTED_SLOT = "<predicted description>"

JUDGE_TEMPLATE = (
    "Below, the “Actual Description” and “Predicted Description” of a character are given. "
    "Please follow the steps to calculate the score for the “Predicted Description”. The score "
    "should range from 1 to 10. In the end, only output the numerical value of the predicted "
    "score along with the reasoning.\n"
    "1. Summarize the emotional state description of the character from the “Actual "
    "Description”.\n"
    "2. Summarize the emotional state description of the character from the “Predicted "
    "Description”.\n"
    "3. Calculate the overlap between the “Predicted Description” and the “Actual Description”. "
    "The higher the overlap, the higher the score.\n"
    "4. Output format: ’Predicted Score’: Predicted Score; ’Reason’: Reason\n"
    "Input:\n"
    "“Actual Description”: " + ACTUAL_SLOT + "\n"
    "“Predicted Description”: " + PREDICTED_SLOT + "\n"
    "Output:"
)


def fill_labels(template: str, labels) -> str:
    return template.replace(STAR, ", ".join(labels))


def sample_instruction(task: str, rng: np.random.Generator, labels) -> str:
    try:
        pool = POOLS[task]
    except KeyError:
        raise ValueError(f"unknown task kind {task!r}") from None
    return fill_labels(pool[int(rng.integers(len(pool)))], labels)
