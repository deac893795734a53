// String-built SVG primitives. Output bytes are a pure function of the
// input numbers: fixed decimal formatting, no timestamps, no randomness.

export const WIDTH = 880;
export const HEIGHT = 460;
export const MARGIN = { top: 48, right: 24, bottom: 56, left: 64 };

export function fmt(value: number): string {
    if (Number.isInteger(value)) return String(value);
    return value.toFixed(3).replace(/\.?0+$/, '');
}

export function escapeXml(text: string): string {
    return text
        .replace(/&/g, '&amp;')
        .replace(/</g, '&lt;')
        .replace(/>/g, '&gt;')
        .replace(/"/g, '&quot;');
}

export interface Scale {
    (value: number): number;
}

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
    const span = d1 - d0 || 1;
    return (value: number) => r0 + ((value - d0) / span) * (r1 - r0);
}

export function openSvg(title: string): string[] {
    return [
        `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="Helvetica, Arial, sans-serif">`,
        `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`,
        `<text x="${WIDTH / 2}" y="24" text-anchor="middle" font-size="16" font-weight="bold">${escapeXml(title)}</text>`,
    ];
}

export function closeSvg(parts: string[]): string {
    parts.push('</svg>');
    return parts.join('\n') + '\n';
}

export function rect(x: number, y: number, w: number, h: number, fill: string, extra = ''): string {
    return `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" fill="${fill}"${extra}/>`;
}

export function line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1): string {
    return `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="${stroke}" stroke-width="${width}"/>`;
}

export function circle(cx: number, cy: number, r: number, fill: string): string {
    return `<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${r}" fill="${fill}"/>`;
}

export function text(
    x: number,
    y: number,
    content: string,
    opts: { anchor?: string; size?: number; fill?: string } = {},
): string {
    const anchor = opts.anchor ?? 'middle';
    const size = opts.size ?? 11;
    const fill = opts.fill ?? '#333';
    return `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" font-size="${size}" fill="${fill}">${escapeXml(content)}</text>`;
}

export function polyline(points: Array<[number, number]>, stroke: string): string {
    const path = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(' ');
    return `<polyline points="${path}" fill="none" stroke="${stroke}" stroke-width="2"/>`;
}

export function axes(x0: number, y0: number, x1: number, y1: number): string[] {
    // y0 is the bottom (data zero), y1 the top
    return [line(x0, y0, x1, y0, '#222'), line(x0, y0, x0, y1, '#222')];
}

export const SERIES_COLORS = ['#1f77b4', '#d62728', '#2ca02c', '#9467bd', '#ff7f0e', '#8c564b'];
