"""Regenerate the 10-utterance fixture corpus shipped in src/apakit/data/fixture.

Layout mirrors Speechocean762: resource/scores.json plus train/ and test/
directories with Kaldi-style id lists. Scores are synthetic.
"""

import json
import random
from pathlib import Path

LEXICON = {
    "WE": ["W", "IY0"], "CALL": ["K", "AO0", "L"], "IT": ["IH0", "T"], "BEAR": ["B", "EH0", "R"],
    "GOOD": ["G", "UH0", "D"], "MORNING": ["M", "AO0", "R", "N", "IH0", "NG"],
    "THE": ["DH", "AH0"], "CAT": ["K", "AE0", "T"], "SAT": ["S", "AE0", "T"], "DOWN": ["D", "AW0", "N"],
    "I": ["AY0"], "LIKE": ["L", "AY0", "K"], "APPLES": ["AE0", "P", "AH0", "L", "Z"],
    "SHE": ["SH", "IY0"], "READS": ["R", "IY0", "D", "Z"], "BOOKS": ["B", "UH0", "K", "S"],
}
SENTENCES = [
    "WE CALL IT BEAR", "GOOD MORNING", "THE CAT SAT DOWN", "I LIKE APPLES", "SHE READS BOOKS",
    "WE LIKE THE CAT", "GOOD BOOKS", "SHE SAT DOWN", "I CALL IT GOOD", "THE BEAR READS",
]


def main(out: Path):
    rng = random.Random(762)
    scores, splits = {}, {"train": [], "test": []}
    for i, text in enumerate(SENTENCES):
        spk = f"{(i // 2) + 1:04d}"
        uid = f"{spk}{i:05d}"
        level = rng.randint(4, 10)
        words = []
        for tok in text.split():
            phones = LEXICON[tok]
            accs = [rng.choice([0.0, 0.6, 1.0, 1.4, 1.8, 2.0, 2.0]) for _ in phones]
            acc = max(0, min(10, round(5 * sum(accs) / len(accs)) + rng.randint(-1, 1)))
            stress = rng.choice([10, 10, 10, 5])
            words.append({"text": tok, "accuracy": acc, "stress": stress,
                          "total": round((acc * 2 + stress) / 3), "phones": phones, "phones-accuracy": accs})
        scores[uid] = {
            "text": text,
            "accuracy": level,
            "fluency": max(0, min(10, level + rng.randint(-2, 2))),
            "prosodic": max(0, min(10, level + rng.randint(-2, 1))),
            "completeness": rng.choice([10.0, 10.0, 9.0, 8.5, 6.0]),
            "total": level,
            "words": words,
        }
        splits["train" if i % 2 == 0 else "test"].append((uid, spk, text))
    (out / "resource").mkdir(parents=True, exist_ok=True)
    (out / "resource" / "scores.json").write_text(json.dumps(scores, indent=1, sort_keys=True) + "\n")
    for name, rows in splits.items():
        d = out / name
        d.mkdir(exist_ok=True)
        (d / "text").write_text("".join(f"{u} {t}\n" for u, _, t in rows))
        (d / "wav.scp").write_text("".join(f"{u} WAVE/SPEAKER{s}/{u}.WAV\n" for u, s, _ in rows))
        spk2utt = {}
        for u, s, _ in rows:
            spk2utt.setdefault(s, []).append(u)
        (d / "spk2utt").write_text("".join(f"{s} {' '.join(us)}\n" for s, us in sorted(spk2utt.items())))


if __name__ == "__main__":
    main(Path(__file__).resolve().parents[1] / "src" / "apakit" / "data" / "fixture")
