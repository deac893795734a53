// Plot builders. Every number shown comes straight from the CSV rows;
// nothing is recomputed here beyond pixel placement.

import { CsvTable, numeric, requireColumns } from './csv.js';
import {
    HEIGHT,
    MARGIN,
    SERIES_COLORS,
    WIDTH,
    axes,
    circle,
    closeSvg,
    fmt,
    line,
    linearScale,
    openSvg,
    polyline,
    rect,
    text,
} from './svg.js';

const PLOT_LEFT = MARGIN.left;
const PLOT_RIGHT = WIDTH - MARGIN.right;
const PLOT_TOP = MARGIN.top;
const PLOT_BOTTOM = HEIGHT - MARGIN.bottom;

interface HistogramPanel {
    label: string;
    table: CsvTable;
}

export function affinityHistogram(panels: HistogramPanel[], title: string): string {
    if (panels.length === 0) {
        throw new Error('histogram plot needs at least one input table');
    }
    for (const panel of panels) {
        requireColumns(panel.table, ['bin_lo', 'bin_hi', 'pos_count', 'neg_count'], panel.label);
    }
    const parts = openSvg(title);
    const panelWidth = (PLOT_RIGHT - PLOT_LEFT - (panels.length - 1) * 32) / panels.length;

    panels.forEach((panel, panelIndex) => {
        const x0 = PLOT_LEFT + panelIndex * (panelWidth + 32);
        const x1 = x0 + panelWidth;
        const rows = panel.table.rows;
        const posCounts = rows.map((r) => numeric(r, 'pos_count'));
        const negCounts = rows.map((r) => numeric(r, 'neg_count'));
        const posTotal = posCounts.reduce((a, b) => a + b, 0);
        const negTotal = negCounts.reduce((a, b) => a + b, 0);
        const peak = Math.max(1, ...posCounts, ...negCounts);
        const sy = linearScale(0, peak, PLOT_BOTTOM, PLOT_TOP + 24);
        const sx = linearScale(0, rows.length, x0, x1);

        parts.push(...axes(x0, PLOT_BOTTOM, x1, PLOT_TOP + 24).slice(0, 1));
        parts.push(line(x0, PLOT_BOTTOM, x0, PLOT_TOP + 24, '#222'));

        const half = (sx(1) - sx(0)) / 2;
        rows.forEach((row, i) => {
            const base = sx(i);
            if (posTotal > 0) {
                const h = PLOT_BOTTOM - sy(posCounts[i]);
                parts.push(
                    rect(base, sy(posCounts[i]), half, h, SERIES_COLORS[0],
                        ` fill-opacity="0.85" data-series="pos" data-count="${fmt(posCounts[i])}"`),
                );
            }
            const offset = posTotal > 0 ? half : 0;
            const width = posTotal > 0 ? half : 2 * half;
            const h = PLOT_BOTTOM - sy(negCounts[i]);
            parts.push(
                rect(base + offset, sy(negCounts[i]), width, h, SERIES_COLORS[1],
                    ` fill-opacity="0.85" data-series="neg" data-count="${fmt(negCounts[i])}"`),
            );
        });

        const annotation =
            posTotal > 0
                ? `positives n=${fmt(posTotal)}, negatives n=${fmt(negTotal)}`
                : `negatives n=${fmt(negTotal)} (no positive pairs)`;
        parts.push(text((x0 + x1) / 2, PLOT_TOP + 14, `${panel.label}: ${annotation}`, { size: 12 }));
        parts.push(text(x0, PLOT_BOTTOM + 16, '0', { anchor: 'start', size: 10 }));
        parts.push(text(x1, PLOT_BOTTOM + 16, '1', { anchor: 'end', size: 10 }));
        parts.push(text((x0 + x1) / 2, PLOT_BOTTOM + 32, 'affinity score', { size: 11 }));
    });
    parts.push(text(18, (PLOT_TOP + PLOT_BOTTOM) / 2, 'pair count', { size: 11 }));
    return closeSvg(parts);
}

export function lineChart(
    table: CsvTable,
    xColumn: string,
    yColumns: string[],
    title: string,
    source: string,
): string {
    requireColumns(table, [xColumn, ...yColumns], source);
    if (table.rows.length === 0) {
        throw new Error(`${source}: no data rows to plot`);
    }
    const xs = table.rows.map((r) => numeric(r, xColumn));
    const allY = yColumns.flatMap((c) => table.rows.map((r) => numeric(r, c)));
    const yMax = Math.max(1e-12, ...allY);
    const yMin = Math.min(0, ...allY);
    const sx = linearScale(Math.min(...xs), Math.max(...xs), PLOT_LEFT, PLOT_RIGHT);
    const sy = linearScale(yMin, yMax, PLOT_BOTTOM, PLOT_TOP + 16);

    const parts = openSvg(title);
    parts.push(...axes(PLOT_LEFT, PLOT_BOTTOM, PLOT_RIGHT, PLOT_TOP + 16));
    yColumns.forEach((column, s) => {
        const color = SERIES_COLORS[s % SERIES_COLORS.length];
        const points: Array<[number, number]> = table.rows.map((row) => [
            sx(numeric(row, xColumn)),
            sy(numeric(row, column)),
        ]);
        if (points.length > 1) {
            parts.push(polyline(points, color));
        }
        for (const [px, py] of points) {
            parts.push(circle(px, py, 3, color));
        }
        parts.push(
            text(PLOT_RIGHT - 8, PLOT_TOP + 28 + 14 * s, column, { anchor: 'end', size: 11, fill: color }),
        );
    });
    parts.push(text((PLOT_LEFT + PLOT_RIGHT) / 2, HEIGHT - 16, xColumn, { size: 11 }));
    for (const [value, label] of [[yMin, fmt(yMin)], [yMax, fmt(yMax)]] as Array<[number, string]>) {
        parts.push(text(PLOT_LEFT - 8, sy(value) + 4, label, { anchor: 'end', size: 10 }));
    }
    return closeSvg(parts);
}

export function ablationBars(table: CsvTable, title: string): string {
    requireColumns(table, ['row', 'ram', 'pals', 'pam', 'wc_r10', 'nc_r10'], 'ablation.csv');
    if (table.rows.length === 0) {
        throw new Error('ablation.csv: no data rows to plot');
    }
    const metrics = ['wc_r10', 'nc_r10'];
    const values = table.rows.flatMap((r) => metrics.map((m) => numeric(r, m)));
    const peak = Math.max(0.05, ...values);
    const sy = linearScale(0, peak, PLOT_BOTTOM, PLOT_TOP + 16);
    const groupWidth = (PLOT_RIGHT - PLOT_LEFT) / table.rows.length;
    const barWidth = groupWidth / (metrics.length + 1);

    const parts = openSvg(title);
    parts.push(...axes(PLOT_LEFT, PLOT_BOTTOM, PLOT_RIGHT, PLOT_TOP + 16));
    table.rows.forEach((row, g) => {
        const groupX = PLOT_LEFT + g * groupWidth + barWidth / 2;
        metrics.forEach((metric, s) => {
            const value = numeric(row, metric);
            const y = sy(value);
            parts.push(
                rect(groupX + s * barWidth, y, barWidth - 2, PLOT_BOTTOM - y, SERIES_COLORS[s],
                    ` data-series="${metric}" data-count="${fmt(value)}"`),
            );
        });
        const flags = ['ram', 'pals', 'pam']
            .map((c) => (row[c] === '1' ? c.toUpperCase() : ''))
            .filter(Boolean)
            .join('+');
        parts.push(text(groupX + barWidth, PLOT_BOTTOM + 16, `(${row.row})`, { size: 11 }));
        parts.push(text(groupX + barWidth, PLOT_BOTTOM + 30, flags || 'baseline', { size: 9 }));
    });
    metrics.forEach((metric, s) => {
        parts.push(
            text(PLOT_RIGHT - 8, PLOT_TOP + 28 + 14 * s, metric, {
                anchor: 'end',
                size: 11,
                fill: SERIES_COLORS[s],
            }),
        );
    });
    parts.push(text(PLOT_LEFT - 8, sy(peak) + 4, fmt(peak), { anchor: 'end', size: 10 }));
    parts.push(text(PLOT_LEFT - 8, PLOT_BOTTOM + 4, '0', { anchor: 'end', size: 10 }));
    return closeSvg(parts);
}

export function sweepChart(table: CsvTable, title: string): string {
    requireColumns(table, ['param', 'value'], 'sweep.csv');
    if (table.rows.length === 0) {
        throw new Error('sweep.csv: no data rows to plot');
    }
    const metricColumns = table.columns.filter((c) => c !== 'param' && c !== 'value');
    if (metricColumns.length === 0) {
        throw new Error('sweep.csv: no metric columns beyond param/value');
    }
    const params = [...new Set(table.rows.map((r) => r.param))];
    if (params.length !== 1) {
        throw new Error(`sweep.csv: expected a single swept parameter, found [${params.join(', ')}]`);
    }
    return lineChart(table, 'value', metricColumns, `${title} (${params[0]} sweep)`, 'sweep.csv');
}
