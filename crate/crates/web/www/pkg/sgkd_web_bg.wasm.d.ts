/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_corpusview_free: (a: number, b: number) => void;
export const corpusview_annotated: (a: number) => [number, number];
export const corpusview_pairs: (a: number) => number;
export const corpusview_truth: (a: number) => [number, number];
export const corpusview_unannotatedRelated: (a: number) => number;
export const distillationWeights: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const generateCorpus: (a: number, b: number, c: number, d: number) => [number, number, number];
export const temperedDistribution: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
