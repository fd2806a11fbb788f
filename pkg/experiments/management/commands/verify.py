from django.core.management.base import BaseCommand, CommandError

from experiments.runner import run_verify
from experiments.serializers import render_summary
from linalg.exceptions import NotPositiveDefinite, SingularMatrix


class Command(BaseCommand):
    help = "Check the coercivity/boundedness constants and the residual bounds on a small level."

    def add_arguments(self, parser):
        parser.add_argument('--level', type=int, default=3, help="Mesh level (at most 4)")
        parser.add_argument('--threads', type=int, help="Threads for densification and subdomain solves")
        parser.add_argument('--json', action='store_true', help="Print the summary as JSON")

    def handle(self, *args, **options):
        try:
            summary = run_verify(options['level'], threads=options['threads'])
        except (ValueError, NotPositiveDefinite, SingularMatrix) as exc:
            raise CommandError(str(exc)) from exc

        if options['json']:
            self.stdout.write(render_summary(summary).decode())
        else:
            for check in summary.checks:
                style = self.style.SUCCESS if check.passed else self.style.ERROR
                self.stdout.write(style(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}"))

        if not summary.passed:
            raise CommandError(f"Verification at level {summary.level} failed: {', '.join(summary.failed)}")
        self.stdout.write(self.style.SUCCESS(f"All {len(summary.checks)} checks passed at level {summary.level}"))
