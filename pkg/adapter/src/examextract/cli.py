"""Command-line front end: examextract extract --video ... --out ..."""

import argparse
import sys

from .encoders import EncoderUnavailable
from .extract import ExtractionError, ExtractionManifest, extract_to_file


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="examextract",
        description="Turn an endoscopy video into examination records.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="encode a video into an exam JSON-Lines file")
    p.add_argument("--video", required=True)
    p.add_argument("--encoder", default="grid8")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--classifier", default=None,
                   help="optional classifier id for per-frame lesion distributions")
    p.add_argument("--patient-id", default=None)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    manifest = ExtractionManifest(
        video_path=args.video,
        encoder=args.encoder,
        stride=args.stride,
        classifier=args.classifier,
        patient_id=args.patient_id,
    )
    try:
        n = extract_to_file(manifest, args.out)
    except (ExtractionError, EncoderUnavailable) as exc:
        print(f"extraction failed: {exc}", file=sys.stderr)
        return 1
    print(f"extract video={args.video} encoder={args.encoder} stride={args.stride} "
          f"records={n} out={args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
