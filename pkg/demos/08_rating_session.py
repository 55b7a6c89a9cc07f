"""A complete blinded rating session against the durable store: build pools,
deal a deck, answer every trial, and read the confusion report.

The HTTP layer serves exactly these operations; the browser console in
frontend/ drives them over the wire.
"""

import tempfile
from pathlib import Path

import numpy as np

from ganlab import phantom as ph
from ganlab.io import write_pgm
from ganlab.vtt import VttStore

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    real_dir, synth_dir = tmp / "real", tmp / "synth"
    real_dir.mkdir(), synth_dir.mkdir()

    # Real pool: rendered phantoms. Synthetic pool: different seeds standing
    # in for generator output.
    for i in range(12):
        write_pgm(real_dir / f"r{i:02d}.pgm",
                  ph.render(ph.generate_phantom(i, extent=32, lesion_count=1)))
        write_pgm(synth_dir / f"s{i:02d}.pgm",
                  ph.render(ph.generate_phantom(1000 + i, extent=32, lesion_count=1)))

    store = VttStore(tmp / "data")
    deck = store.create_session(sorted(real_dir.glob("*.pgm")),
                                sorted(synth_dir.glob("*.pgm")),
                                counts=(5, 5), seed=3)
    print(f"session {deck.session_id}: {len(deck.items)} blinded items")

    # A scripted rater: answers 'real' when the image is bright on average.
    answered = 0
    while True:
        try:
            trial = store.next_trial(deck.session_id)
        except Exception:
            break
        import base64
        img = np.frombuffer(base64.b64decode(trial["image"]["pixels"]), dtype=np.uint8)
        guess = "real" if img.mean() > 100 else "synthetic"
        ack = store.record_response(deck.session_id, trial["index"], {"realness": guess})
        answered = ack["answered"]
    print("responses recorded:", answered)

    # Durability: a fresh store instance replays the log and agrees.
    reborn = VttStore(tmp / "data")
    report = reborn.finalize_report(deck.session_id)
    cells = report["questions"]["realness"]["cells"]
    print(f"accuracy {report['questions']['realness']['accuracy']}% "
          "(both pools are phantoms here, so chance = 50% is the expected story)")
    print("confusion cells (% of each true class):")
    for k, v in cells.items():
        print(f"  {k:28s} {v:5.1f}")
