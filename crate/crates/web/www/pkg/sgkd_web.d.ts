/* tslint:disable */
/* eslint-disable */

export class CorpusView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly annotated: Float64Array;
    readonly pairs: number;
    readonly truth: Float64Array;
    readonly unannotatedRelated: number;
}

/**
 * `scheme` is "ukd" or "ckd".
 */
export function distillationWeights(logits: Float64Array, classes: number, temperature: number, scheme: string): Float64Array;

export function generateCorpus(seed: number, num_images: number, zipf_s: number, afn_rate: number): CorpusView;

/**
 * Tempered probabilities followed by their entropy as the last element.
 */
export function temperedDistribution(logits: Float64Array, temperature: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_corpusview_free: (a: number, b: number) => void;
    readonly corpusview_annotated: (a: number) => [number, number];
    readonly corpusview_pairs: (a: number) => number;
    readonly corpusview_truth: (a: number) => [number, number];
    readonly corpusview_unannotatedRelated: (a: number) => number;
    readonly distillationWeights: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly generateCorpus: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly temperedDistribution: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
