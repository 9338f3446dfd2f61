from __future__ import annotations

import os
from dataclasses import dataclass

from braintrust.wrappers.google_genai import setup_genai
from google import genai
from google.genai import types


@dataclass(frozen=True)
class GeminiClient:
    client: genai.Client
    model: str
    temperature: float

    def generate(self, prompt: str) -> str:
        response = self.client.models.generate_content(
            model=self.model,
            contents=prompt,
            config=types.GenerateContentConfig(temperature=self.temperature),
        )
        return response.text or ""


def create_gemini_client(
    api_key: str, *, model: str, temperature: float = 0.0, traced: bool = False
) -> GeminiClient:
    if traced:
        setup_genai(
            project_name=os.getenv("BRAINTRUST_PROJECT_NAME"),
            api_key=os.environ.get("BRAINTRUST_API_KEY"),
        )
    return GeminiClient(
        client=genai.Client(api_key=api_key), model=model, temperature=temperature
    )
