#!/usr/bin/env python3
"""
Excel writer for barrier-hom convergence reports
Creates a workbook with summary, effective coefficients, convergence and a priori sheets
"""
import logging
from pathlib import Path

from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill, Border, Side, Alignment
from openpyxl.utils import get_column_letter

from src.outputs import eps_label

logger = logging.getLogger(__name__)


class ExcelWriter:
    """Writes a ConvergenceReport to a formatted .xlsx workbook"""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

        self.colors = {
            'header': PatternFill(start_color='B0C4DE', end_color='B0C4DE', fill_type='solid'),   # Pastel blue header
            'phase1': PatternFill(start_color='FFFACD', end_color='FFFACD', fill_type='solid'),   # Pastel yellow
            'phase2': PatternFill(start_color='E6F3FF', end_color='E6F3FF', fill_type='solid'),   # Pastel blue
            'coupling': PatternFill(start_color='E6E6FA', end_color='E6E6FA', fill_type='solid'), # Pastel purple
            'pass': PatternFill(start_color='F0FFF0', end_color='F0FFF0', fill_type='solid'),     # Pastel green
            'fail': PatternFill(start_color='FFB6C1', end_color='FFB6C1', fill_type='solid'),     # Pastel red
        }

        self.fonts = {
            'title': Font(bold=True, size=16),
            'header': Font(color='FFFFFF', bold=True, size=12),
            'label': Font(bold=True, size=10, color='333333'),
            'value': Font(size=10),
        }

        self.borders = {
            'thin': Border(
                left=Side(style='thin'),
                right=Side(style='thin'),
                top=Side(style='thin'),
                bottom=Side(style='thin')
            )
        }

    def write_report_workbook(self, report, filename: str = "report.xlsx") -> Path:
        filepath = self.output_dir / filename

        wb = Workbook()
        wb.remove(wb.active)

        self._create_summary_sheet(wb, report)
        self._create_effective_sheet(wb, report.effective)
        self._create_convergence_sheet(wb, report.rows)
        self._create_apriori_sheet(wb, report.sweep.rows)

        wb.save(filepath)
        logger.info("Excel workbook created: %s", filepath)
        return filepath

    def _header_row(self, ws, row: int, headers):
        for col, text in enumerate(headers, start=1):
            cell = ws.cell(row=row, column=col, value=text)
            cell.fill = self.colors['header']
            cell.font = self.fonts['header']
            cell.border = self.borders['thin']
            cell.alignment = Alignment(horizontal='center')

    def _value_cell(self, ws, row: int, col: int, value, fill=None, number_format='0.000000E+00'):
        cell = ws.cell(row=row, column=col, value=value)
        cell.font = self.fonts['value']
        cell.border = self.borders['thin']
        if isinstance(value, float):
            cell.number_format = number_format
        if fill is not None:
            cell.fill = self.colors[fill]
        return cell

    def _autosize(self, ws, widths):
        for col, width in enumerate(widths, start=1):
            ws.column_dimensions[get_column_letter(col)].width = width

    def _create_summary_sheet(self, wb: Workbook, report):
        ws = wb.create_sheet(title="Summary")
        cfg = report.config
        ws['A1'] = "Convergence report"
        ws['A1'].font = self.fonts['title']

        info = [
            ("Geometry", cfg.geometry.describe()),
            ("N cell", cfg.n_cell),
            ("N macro", cfg.n_macro),
            ("N micro", cfg.n_micro),
            ("Epsilons", ", ".join(eps_label(e) for e in cfg.eps_list)),
            ("Sign convention", report.effective.sign_convention),
            ("Gamma sign", cfg.gamma_sign),
            ("Outside hypotheses", "yes" if report.outside_hypotheses else "no"),
            ("Wall time [s]", round(report.wall_time, 2)),
        ]
        row = 3
        for label, value in info:
            ws.cell(row=row, column=1, value=label).font = self.fonts['label']
            self._value_cell(ws, row, 2, value)
            row += 1

        row += 1
        self._header_row(ws, row, ["Flag", "Result"])
        for name, ok in report.flags.items():
            row += 1
            ws.cell(row=row, column=1, value=name).border = self.borders['thin']
            self._value_cell(ws, row, 2, "pass" if ok else "FAIL", fill='pass' if ok else 'fail')
        self._autosize(ws, [24, 40])

    def _create_effective_sheet(self, wb: Workbook, eff):
        ws = wb.create_sheet(title="Effective")
        self._header_row(ws, 1, ["Name", "Indices", "Value"])
        for row, (name, indices, value) in enumerate(eff.rows(), start=2):
            fill = 'phase1' if name.endswith("1") else 'phase2' if name.endswith("2") else 'coupling'
            self._value_cell(ws, row, 1, name, fill)
            self._value_cell(ws, row, 2, indices, fill)
            self._value_cell(ws, row, 3, value, fill)
        self._autosize(ws, [10, 10, 22])

    def _create_convergence_sheet(self, wb: Workbook, rows):
        ws = wb.create_sheet(title="Convergence")
        self._header_row(ws, 1, ["Epsilon", "Error 1", "Error 2", "Error 1 corrected", "Error 2 corrected",
                                 "Micro dofs", "Time [s]"])
        for r, item in enumerate(rows, start=2):
            self._value_cell(ws, r, 1, eps_label(item.epsilon))
            self._value_cell(ws, r, 2, float(item.e1), 'phase1')
            self._value_cell(ws, r, 3, float(item.e2), 'phase2')
            self._value_cell(ws, r, 4, float(item.e1_corrected), 'phase1')
            self._value_cell(ws, r, 5, float(item.e2_corrected), 'phase2')
            self._value_cell(ws, r, 6, int(item.dofs))
            self._value_cell(ws, r, 7, float(item.wall_time), number_format='0.00')
        self._autosize(ws, [10, 16, 16, 18, 18, 12, 10])

    def _create_apriori_sheet(self, wb: Workbook, rows):
        ws = wb.create_sheet(title="Apriori")
        self._header_row(ws, 1, ["Epsilon", "V-norm", "Source norm", "Ratio", "Ritz min"])
        for r, item in enumerate(rows, start=2):
            self._value_cell(ws, r, 1, eps_label(item.epsilon))
            self._value_cell(ws, r, 2, float(item.vnorm))
            self._value_cell(ws, r, 3, float(item.fnorm))
            self._value_cell(ws, r, 4, float(item.ratio))
            self._value_cell(ws, r, 5, None if item.ritz_min is None else float(item.ritz_min))
        self._autosize(ws, [10, 16, 16, 16, 16])
