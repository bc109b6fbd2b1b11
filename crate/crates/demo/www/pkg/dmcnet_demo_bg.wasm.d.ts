/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_hogglyphs_free: (a: number, b: number) => void;
export const __wbg_rocview_free: (a: number, b: number) => void;
export const hog_glyphs: (a: number, b: number, c: number, d: number) => [number, number, number];
export const hogglyphs_bins: (a: number) => number;
export const hogglyphs_cells_x: (a: number) => number;
export const hogglyphs_cells_y: (a: number) => number;
export const hogglyphs_gray: (a: number) => [number, number];
export const hogglyphs_values: (a: number) => [number, number];
export const roc: (a: number, b: number, c: number, d: number) => [number, number, number];
export const rocview_auc: (a: number) => number;
export const rocview_fpr: (a: number) => [number, number];
export const rocview_gini: (a: number) => number;
export const rocview_tpr: (a: number) => [number, number];
export const synthetic_face: (a: number, b: number) => [number, number, number, number];
export const tsne_scatter: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
