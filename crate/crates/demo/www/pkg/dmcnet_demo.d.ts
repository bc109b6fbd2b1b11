/* tslint:disable */
/* eslint-disable */

/**
 * Per-cell orientation histograms of a 100×100 grayscale view.
 */
export class HogGlyphs {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly bins: number;
    readonly cells_x: number;
    readonly cells_y: number;
    /**
     * The preprocessed grayscale image the histograms were computed on.
     */
    readonly gray: Uint8Array;
    /**
     * `cells_y × cells_x × bins`, row-major.
     */
    readonly values: Float32Array;
}

export class RocView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly auc: number;
    readonly fpr: Float64Array;
    readonly gini: number;
    readonly tpr: Float64Array;
}

export function hog_glyphs(rgba: Uint8Array, width: number, height: number): HogGlyphs;

export function roc(scores: Float64Array, truth: Uint8Array): RocView;

export function synthetic_face(_class: number, index: number): Uint8Array;

export function tsne_scatter(per_cluster: number, perplexity: number, iterations: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_hogglyphs_free: (a: number, b: number) => void;
    readonly __wbg_rocview_free: (a: number, b: number) => void;
    readonly hog_glyphs: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly hogglyphs_bins: (a: number) => number;
    readonly hogglyphs_cells_x: (a: number) => number;
    readonly hogglyphs_cells_y: (a: number) => number;
    readonly hogglyphs_gray: (a: number) => [number, number];
    readonly hogglyphs_values: (a: number) => [number, number];
    readonly roc: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly rocview_auc: (a: number) => number;
    readonly rocview_fpr: (a: number) => [number, number];
    readonly rocview_gini: (a: number) => number;
    readonly rocview_tpr: (a: number) => [number, number];
    readonly synthetic_face: (a: number, b: number) => [number, number, number, number];
    readonly tsne_scatter: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
