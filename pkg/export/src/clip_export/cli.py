"""clip-export command line: ``images`` and ``prompts`` subcommands."""
from __future__ import annotations

import argparse
import sys

from . import export
from .datasets import DatasetError
from .encoders import EncoderError
from .ldeb import FormatError
from .templates import TemplateError


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="Export vision-language embeddings into LDEB/CSV/manifest files",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_img = sub.add_parser("images", help="export one embedding row per dataset image")
    p_img.add_argument("--dataset", required=True, choices=["celeba", "waterbirds", "folder"])
    p_img.add_argument("--root", required=True, help="dataset root directory")
    p_img.add_argument("--model", default="stub:64", help="stub:<dim> or clip:<model-id>")
    p_img.add_argument("--attr", default="Male", help="celeba group attribute")
    p_img.add_argument("--batch", type=int, default=32)
    p_img.add_argument("--out", required=True)

    p_pr = sub.add_parser("prompts", help="export classification and debiasing prompts")
    p_pr.add_argument("--model", default="stub:64")
    p_pr.add_argument("--class-template", required=True)
    p_pr.add_argument(
        "--debias-template", action="append", required=True,
        help="repeatable; use [{...},{...}] for multiple groups in one template",
    )
    p_pr.add_argument("--note", action="append", default=[],
                      help="free-form note recorded in the manifest")
    p_pr.add_argument("--batch", type=int, default=32)
    p_pr.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.subcommand == "images":
            job = export.ExportJob(
                model=args.model, dataset=args.dataset, root=args.root,
                attr=args.attr, batch_size=args.batch, out_dir=args.out,
            )
            report = export.export_images(job)
            for split, count in sorted(report.counts.items()):
                print(f"{split}: {count} rows, dim {report.dim}, "
                      f"unit-norm={report.normalized[split]}")
            if report.skipped:
                print(f"skipped {len(report.skipped)} missing files:", file=sys.stderr)
                for path in report.skipped:
                    print(f"  {path}", file=sys.stderr)
                return 1
            return 0
        job = export.ExportJob(
            model=args.model, class_template=args.class_template,
            debias_templates=tuple(args.debias_template),
            batch_size=args.batch, out_dir=args.out,
        )
        info = export.export_prompts(job, notes=args.note)
        print(f"classes={info['classes']} debias_groups={info['debias_groups']} dim={info['dim']}")
        return 0
    except (DatasetError, TemplateError, FormatError, EncoderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
