// Minimal CSV handling for the driver's outputs. The files are plain
// comma-separated with a header row and never contain quoting, so a
// split-based parser with strict column validation is all we need.

export interface CsvTable {
    columns: string[];
    rows: Record<string, string>[];
}

export function parseCsv(text: string): CsvTable {
    const lines = text
        .split(/\r?\n/)
        .map((line) => line.trim())
        .filter((line) => line.length > 0);
    if (lines.length === 0) {
        throw new Error('CSV is empty: no header row');
    }
    const columns = lines[0].split(',').map((c) => c.trim());
    const rows = lines.slice(1).map((line, index) => {
        const cells = line.split(',');
        if (cells.length !== columns.length) {
            throw new Error(
                `CSV row ${index + 1} has ${cells.length} cells, header has ${columns.length}`,
            );
        }
        const row: Record<string, string> = {};
        columns.forEach((name, i) => {
            row[name] = cells[i].trim();
        });
        return row;
    });
    return { columns, rows };
}

export function requireColumns(table: CsvTable, needed: string[], source: string): void {
    const missing = needed.filter((name) => !table.columns.includes(name));
    if (missing.length > 0) {
        throw new Error(
            `${source}: missing required column(s) ${missing.join(', ')}; ` +
                `found [${table.columns.join(', ')}]`,
        );
    }
}

export function numeric(row: Record<string, string>, column: string): number {
    const value = Number(row[column]);
    if (!Number.isFinite(value)) {
        throw new Error(`column '${column}' holds non-numeric value '${row[column]}'`);
    }
    return value;
}
