/* tslint:disable */
/* eslint-disable */

/**
 * A grayscale picture plus a one-line description.
 */
export class View {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Pixels as RGBA bytes, ready for `ImageData`.
     */
    rgba(): Uint8Array;
    readonly height: number;
    readonly summary: string;
    readonly width: number;
}

export function embed(rgba: Uint8Array, width: number, height: number, qf: number, bpnzac: number, seed: bigint): View;

export function gradient_heatmap(bank: string, qf: number): View;

/**
 * RGBA pixels of a half-smooth, half-noisy synthetic cover.
 */
export function synthetic_rgba(size: number, seed: bigint): Uint8Array;

export function uerd_costs(rgba: Uint8Array, width: number, height: number, qf: number): View;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_view_free: (a: number, b: number) => void;
    readonly embed: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly gradient_heatmap: (a: number, b: number, c: number) => [number, number, number];
    readonly synthetic_rgba: (a: number, b: bigint) => [number, number, number, number];
    readonly uerd_costs: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly view_height: (a: number) => number;
    readonly view_rgba: (a: number) => [number, number];
    readonly view_summary: (a: number) => [number, number];
    readonly view_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
