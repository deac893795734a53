// CLI entry: render one SVG from one (or, for histograms, up to two)
// of the driver's CSV outputs.
//
//   node dist/main.js pa-histograms --in eval/histograms.csv [--in2 other.csv] --out pa.svg
//   node dist/main.js losses        --in run/train_log.csv --out losses.svg
//   node dist/main.js sweep         --in sweep.csv --out sweep.svg
//   node dist/main.js ablation      --in ablation.csv --out ablation.svg

import { readFileSync, writeFileSync } from 'node:fs';
import { basename } from 'node:path';
import { parseCsv } from './csv.js';
import { ablationBars, affinityHistogram, lineChart, sweepChart } from './plots.js';

interface Args {
    command: string;
    input: string;
    input2?: string;
    output: string;
    title?: string;
}

export function parseArgs(argv: string[]): Args {
    const [command, ...rest] = argv;
    const flags = new Map<string, string>();
    for (let i = 0; i < rest.length; i += 2) {
        const key = rest[i];
        const value = rest[i + 1];
        if (!key?.startsWith('--') || value === undefined) {
            throw new Error(`malformed flag pair near '${key ?? ''}'`);
        }
        flags.set(key.slice(2), value);
    }
    const input = flags.get('in');
    const output = flags.get('out');
    if (!command || !input || !output) {
        throw new Error(
            'usage: <pa-histograms|losses|sweep|ablation> --in <csv> [--in2 <csv>] --out <svg> [--title <text>]',
        );
    }
    return { command, input, input2: flags.get('in2'), output, title: flags.get('title') };
}

export function render(args: Args): string {
    const table = parseCsv(readFileSync(args.input, 'utf-8'));
    switch (args.command) {
        case 'pa-histograms': {
            const panels = [{ label: basename(args.input), table }];
            if (args.input2) {
                panels.push({
                    label: basename(args.input2),
                    table: parseCsv(readFileSync(args.input2, 'utf-8')),
                });
            }
            return affinityHistogram(panels, args.title ?? 'Pair affinity score distribution');
        }
        case 'losses':
            return lineChart(
                table,
                'epoch',
                ['loss_rel', 'loss_pa', 'loss_pam', 'total'],
                args.title ?? 'Training losses',
                basename(args.input),
            );
        case 'sweep':
            return sweepChart(table, args.title ?? 'Threshold sensitivity');
        case 'ablation':
            return ablationBars(table, args.title ?? 'Component ablation (R@10)');
        default:
            throw new Error(`unknown plot kind '${args.command}'`);
    }
}

export function main(argv: string[]): number {
    try {
        const args = parseArgs(argv);
        const svg = render(args);
        writeFileSync(args.output, svg, 'utf-8');
        console.log(`wrote ${args.output}`);
        return 0;
    } catch (error) {
        console.error(`error: ${error instanceof Error ? error.message : error}`);
        return 1;
    }
}

if (process.argv[1] && process.argv[1].endsWith('main.js')) {
    process.exit(main(process.argv.slice(2)));
}
