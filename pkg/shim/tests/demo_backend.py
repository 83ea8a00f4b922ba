"""Tiny bridge backend used to exercise bridge mode in tests."""


class UpperBackend:
    def __init__(self, options):
        self.prefix = options.get("prefix", "")

    def inference(self, prompt, params):
        text = "".join(c.get("value", "") for m in prompt or []
                       for c in m.get("contents", []) if c.get("type") == "text")
        return {"text": self.prefix + text.upper()}

    def transcribe(self, audio):
        return f"transcript-of:{audio}"

    def judge(self, question, answer, rubric):
        return 8


def create_backend(options):
    return UpperBackend(options)
