from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from experiments.runner import PRESETS, ExperimentCellError, ExperimentConfig, iteration_pivot, run_table


def _int_list(value):
    return tuple(int(item) for item in value.split(",") if item.strip())


def _str_list(value):
    return tuple(item.strip() for item in value.split(",") if item.strip())


def _optional(cast):
    def parse(value):
        return "none" if value.lower() == "none" else cast(value)
    return parse


class Command(BaseCommand):
    help = "Iterations to convergence of the Schwarz preconditioned solvers over a range of subdomain counts."

    def add_arguments(self, parser):
        parser.add_argument('--preset', choices=sorted(PRESETS), help="Start from a published configuration")
        parser.add_argument('--h-level', type=int, dest='h_level', help="Fine mesh level, h = 2^-level")
        parser.add_argument('--H-level', type=int, dest='H_level', help="Coarse mesh level, H = 2^-level")
        parser.add_argument('--ns', type=_int_list, dest='ns_list', help="Comma separated subdomain counts")
        parser.add_argument('--precond', type=_str_list, help="Comma separated subset of b,z,b+z,b+bt")
        parser.add_argument('--tol', type=float, dest='rel_tol', help="Relative residual tolerance")
        parser.add_argument('--restart', type=_optional(int), help="Restart length, or 'none'")
        parser.add_argument('--coarse-tol', type=_optional(float), dest='coarse_tol',
                            help="Inner coarse GMRES tolerance, or 'none' for LU")
        parser.add_argument('--threads', type=int, help="Threads for the subdomain solves")
        parser.add_argument('--out', type=Path, help="Write the table to this file")
        parser.add_argument('--format', choices=['csv', 'json'], help="Output file format")
        parser.add_argument('--dump-partition', type=Path, dest='dump_partition',
                            help="Directory for one partition summary CSV per subdomain count")

    def handle(self, *args, **options):
        # 1) resolve the configuration: settings, preset, flags
        keys = ('h_level', 'H_level', 'ns_list', 'precond', 'rel_tol', 'restart', 'coarse_tol',
                'threads', 'out', 'format', 'dump_partition')
        try:
            config = ExperimentConfig.build(options['preset'], **{key: options[key] for key in keys})
        except ValueError as exc:
            raise CommandError(str(exc)) from exc

        # 2) run every cell
        self.stdout.write(f"→ h=2^-{config.h_level}, H=2^-{config.H_level}, ns={list(config.ns_list)}")
        try:
            table = run_table(config)
        except ExperimentCellError as exc:
            raise CommandError(str(exc)) from exc

        # 3) report
        if table.empty:
            self.stdout.write(self.style.WARNING("Nothing to run: the table is empty"))
        else:
            self.stdout.write(table.to_string(index=False))
            self.stdout.write("")
            self.stdout.write(iteration_pivot(table).to_string())
        if config.out is not None:
            self.stdout.write(self.style.SUCCESS(f"Table written to {config.out}"))
        else:
            self.stdout.write(self.style.SUCCESS("Done"))
