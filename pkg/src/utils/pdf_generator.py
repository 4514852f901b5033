"""
PDF Metrics Report Utility

This module renders evaluation runs (configuration, per-direction metrics and
hop sweeps) as PDF reports using ReportLab.
"""

import io
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4
from reportlab.platypus import SimpleDocTemplate, Table, TableStyle, Paragraph, Spacer
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.lib.enums import TA_LEFT, TA_CENTER

from src.models.models import HITS_CUTOFFS, RunRecord

DIRECTION_NAMES = ("g1_to_g2", "g2_to_g1")


class MetricsReportGenerator:
    def __init__(self, title: str = "Entity Alignment Run Report"):
        self.title = title
        self.styles = getSampleStyleSheet()
        self._create_custom_styles()

    def _create_custom_styles(self):
        """Create custom paragraph styles for the report"""
        self.styles.add(ParagraphStyle(
            name='ReportTitle',
            parent=self.styles['Heading1'],
            fontSize=20,
            spaceAfter=24,
            alignment=TA_CENTER,
            textColor=colors.darkblue
        ))

        self.styles.add(ParagraphStyle(
            name='SectionHeader',
            parent=self.styles['Heading3'],
            fontSize=12,
            spaceAfter=6,
            alignment=TA_LEFT,
            textColor=colors.darkblue
        ))

        self.styles.add(ParagraphStyle(
            name='CustomNormal',
            parent=self.styles['Normal'],
            fontSize=10,
            spaceAfter=3,
            alignment=TA_LEFT
        ))

    def generate_report(self, run: RunRecord, sweep: Optional[pd.DataFrame] = None,
                        output_path: Union[str, Path, io.BytesIO, None] = None) -> str:
        """
        Generate a PDF report of one run and return the file path

        Args:
            run: registry record holding config and metrics
            sweep: optional hop-sweep table indexed by k
            output_path: file path or binary buffer; defaults to data/exports/reports

        Returns:
            str: Path to the generated PDF file ("" for buffers)
        """
        if output_path is None:
            exports_dir = Path("data/exports/reports")
            exports_dir.mkdir(parents=True, exist_ok=True)
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            output_path = exports_dir / f"run_{run.run_id[:8]}_{timestamp}.pdf"

        target = output_path if isinstance(output_path, io.BytesIO) else str(output_path)
        doc = SimpleDocTemplate(
            target,
            pagesize=A4,
            rightMargin=72,
            leftMargin=72,
            topMargin=72,
            bottomMargin=18
        )

        story = []
        story.extend(self._build_header(run))
        story.append(Spacer(1, 16))
        story.extend(self._build_metrics_table(run))
        story.append(Spacer(1, 16))
        if sweep is not None and not sweep.empty:
            story.extend(self._build_sweep_table(sweep))
            story.append(Spacer(1, 16))
        story.extend(self._build_config_table(run))
        if run.notes:
            story.append(Spacer(1, 12))
            story.append(Paragraph("Notes:", self.styles['SectionHeader']))
            story.append(Paragraph(run.notes, self.styles['CustomNormal']))

        doc.build(story)
        return "" if isinstance(output_path, io.BytesIO) else str(output_path)

    def render_bytes(self, run: RunRecord, sweep: Optional[pd.DataFrame] = None) -> bytes:
        """PDF content for in-memory downloads"""
        buffer = io.BytesIO()
        self.generate_report(run, sweep, buffer)
        return buffer.getvalue()

    def _build_header(self, run: RunRecord):
        elements = [Paragraph(self.title, self.styles['ReportTitle'])]
        created = run.created_at.strftime("%Y-%m-%d %H:%M") if run.created_at else "N/A"
        details = [
            ['Run:', run.run_id],
            ['Command:', run.command],
            ['Task:', run.task_path or 'N/A'],
            ['Ablation:', run.ablation],
            ['Anchor hop:', str(run.anchor_hop)],
            ['Created:', created],
        ]
        table = Table(details, colWidths=[1.5*inch, 4.5*inch])
        table.setStyle(TableStyle([
            ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
            ('FONTNAME', (0, 0), (0, -1), 'Helvetica-Bold'),
            ('FONTNAME', (1, 0), (1, -1), 'Helvetica'),
            ('FONTSIZE', (0, 0), (-1, -1), 10),
            ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
        ]))
        elements.append(table)
        return elements

    def _grid(self, table_data, col_widths):
        table = Table(table_data, colWidths=col_widths)
        table_style = [
            ('BACKGROUND', (0, 0), (-1, 0), colors.darkblue),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.whitesmoke),
            ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
            ('ALIGN', (0, 1), (0, -1), 'LEFT'),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, 0), 10),
            ('FONTSIZE', (0, 1), (-1, -1), 9),
            ('GRID', (0, 0), (-1, -1), 1, colors.black),
            ('VALIGN', (0, 0), (-1, -1), 'TOP'),
        ]
        # Alternate row colors
        for i in range(1, len(table_data)):
            if i % 2 == 0:
                table_style.append(('BACKGROUND', (0, i), (-1, i), colors.lightgrey))
        table.setStyle(TableStyle(table_style))
        return table

    def _build_metrics_table(self, run: RunRecord):
        """One row per direction present in the metrics"""
        metrics = run.metrics
        elements = [Paragraph("Metrics", self.styles['SectionHeader'])]
        if not metrics:
            elements.append(Paragraph("No metrics recorded.", self.styles['CustomNormal']))
            return elements

        headers = ['Direction', 'MRR'] + [f'Hits@{k}' for k in HITS_CUTOFFS] + ['Queries', 'Degenerate']
        rows = [headers]

        def row(label, prefix=""):
            values = [label, f"{metrics.get(prefix + 'mrr', 0.0):.4f}"]
            values += [f"{metrics.get(f'{prefix}hits@{k}', 0.0):.4f}" for k in HITS_CUTOFFS]
            values += [str(metrics.get(prefix + 'num_queries', 0)), str(metrics.get(prefix + 'num_degenerate_queries', 0))]
            return values

        for name in DIRECTION_NAMES:
            if f"{name}.mrr" in metrics:
                rows.append(row(name, f"{name}."))
        if 'mrr' in metrics:
            rows.append(row(metrics.get('direction', 'overall')))
        elements.append(self._grid(rows, [1.3*inch, 0.8*inch, 0.8*inch, 0.8*inch, 0.8*inch, 0.8*inch, 0.9*inch]))

        extras = []
        if 'candidate_pool' in metrics:
            extras.append(f"Candidate pool: {metrics['candidate_pool']}")
        if 'wall_clock_seconds' in metrics:
            extras.append(f"Wall clock: {float(metrics['wall_clock_seconds']):.1f}s")
        if 'max_relative_error' in metrics:
            extras.append(f"Max relative gradient error: {float(metrics['max_relative_error']):.3e}")
        if extras:
            elements.append(Spacer(1, 6))
            elements.append(Paragraph(" | ".join(extras), self.styles['CustomNormal']))
        return elements

    def _build_sweep_table(self, sweep: pd.DataFrame):
        elements = [Paragraph("Anchor-hop sweep", self.styles['SectionHeader'])]
        columns = [c for c in ['mrr'] + [f'hits@{k}' for k in HITS_CUTOFFS] + ['num_degenerate_queries']
                   if c in sweep.columns]
        rows = [['k'] + columns]
        for k, values in sweep.iterrows():
            rows.append([str(k)] + [f"{values[c]:.4f}" if isinstance(values[c], float) else str(values[c])
                                    for c in columns])
        elements.append(self._grid(rows, [0.6*inch] + [1.0*inch] * len(columns)))
        return elements

    def _build_config_table(self, run: RunRecord):
        elements = [Paragraph("Configuration", self.styles['SectionHeader'])]
        rows = [['Setting', 'Value']]
        for key in sorted(run.config):
            rows.append([key, str(run.config[key])])
        elements.append(self._grid(rows, [2.5*inch, 3.5*inch]))
        return elements
