/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_view_free: (a: number, b: number) => void;
export const embed: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const gradient_heatmap: (a: number, b: number, c: number) => [number, number, number];
export const synthetic_rgba: (a: number, b: bigint) => [number, number, number, number];
export const uerd_costs: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const view_height: (a: number) => number;
export const view_rgba: (a: number) => [number, number];
export const view_summary: (a: number) => [number, number];
export const view_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
