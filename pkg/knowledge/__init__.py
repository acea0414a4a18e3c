# Guidelines, prompts, risk rubric and defense catalog
