"""
Console view: everything the CLI shows to a user goes through here
"""
import sys
from typing import Iterable, TextIO

from predmap.models.records import RunManifest, StepMetrics
from predmap.models.retrieval import EvalReport


def format_table(header: list[str], rows: list[list[str]]) -> str:
    """ Left-aligned columns separated by two spaces, header underlined """
    widths = [max(len(cell) for cell in column) for column in zip(header, *rows)]
    lines = ['  '.join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip(),
             '  '.join('-' * w for w in widths)]
    lines += ['  '.join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
              for row in rows]
    return '\n'.join(lines)


def report_table(report: EvalReport) -> str:
    """ One row per metric, one column per K """
    header = ['metric'] + [f'@{k}' for k in report.ks]
    rows = [['Recall'] + [f'{report.recall[k]:.4f}' for k in report.ks],
            ['mAP'] + [f'{report.map[k]:.4f}' for k in report.ks]]
    return format_table(header, rows)


class ConsoleView:
    """
    Writes results to a text stream.
    out - normal output (stdout by default)
    err - error messages (stderr by default)
    """

    def __init__(self, out: TextIO | None = None, err: TextIO | None = None) -> None:
        self.out = out if out is not None else sys.stdout
        self.err = err if err is not None else sys.stderr

    def show_message(self, text: str) -> None:
        """ Plain line """
        print(text, file=self.out)

    def show_error(self, text: str) -> None:
        """ Error line on the error stream """
        print(f'error: {text}', file=self.err)

    def show_metrics(self, metrics: StepMetrics) -> None:
        """ Losses of one step """
        self.show_message(f'step {metrics.step}: L_pred {metrics.l_pred:.4f}  '
                          f'L_align {metrics.l_align:.4f}  L {metrics.loss:.4f}  '
                          f'gate {metrics.gate_value:.4f}')

    def show_report(self, report: EvalReport) -> None:
        """ Aligned Recall@K / mAP@K table """
        self.show_message(report_table(report))

    def show_suites(self, results: Iterable) -> None:
        """ Pass/fail line per verify suite with its headline numbers """
        for result in results:
            status = 'PASS' if result.passed else 'FAIL'
            stats = '  '.join(f'{k}={v:.3g}' for k, v in result.stats.items())
            self.show_message(f'{result.name:<11}{status}  {result.checks} checks  '
                              f'{result.seconds:.1f}s  {stats}'.rstrip())
            for failure in result.failures[:10]:
                self.show_message(f'    {failure}')
            if len(result.failures) > 10:
                self.show_message(f'    ... {len(result.failures) - 10} more')

    def show_runs(self, manifests: list[RunManifest]) -> None:
        """ Registry listing """
        if not manifests:
            self.show_message('no runs registered')
            return
        rows = [[f'{m.pk}', m.command, m.started, m.finished, f'{m.seed}', m.version,
                 m.output_dir] for m in manifests]
        self.show_message(format_table(['id', 'command', 'started', 'finished', 'seed',
                                        'version', 'output'], rows))
