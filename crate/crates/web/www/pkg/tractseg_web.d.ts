/* tslint:disable */
/* eslint-disable */

export class PhantomView {
    free(): void;
    [Symbol.dispose](): void;
    dims(): Uint32Array;
    fa_slice(axis: number, index: number): Float32Array;
    constructor(radius: number, sagitta: number, sigma: number, seed: number);
    tract_voxels(): number;
    truth_slice(axis: number, index: number): Float32Array;
}

export class TrainerView {
    free(): void;
    [Symbol.dispose](): void;
    dice(): number;
    losses(): Float64Array;
    /**
     * `arch` is `"unet"` or `"vnet"`.
     */
    constructor(phantom: PhantomView, arch: string, weight: number, learning_rate: number, seed: number);
    probability_slice(axis: number, index: number): Float32Array;
    step(): number;
}

/**
 * JSON `{n, mean_diff, sd_diff, lower, upper, svg}` for two lists of numbers.
 */
export function bland_altman_report(scan: string, rescan: string, measure: string, unit: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_phantomview_free: (a: number, b: number) => void;
    readonly __wbg_trainerview_free: (a: number, b: number) => void;
    readonly bland_altman_report: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly phantomview_dims: (a: number) => [number, number];
    readonly phantomview_fa_slice: (a: number, b: number, c: number) => [number, number, number, number];
    readonly phantomview_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly phantomview_tract_voxels: (a: number) => number;
    readonly phantomview_truth_slice: (a: number, b: number, c: number) => [number, number, number, number];
    readonly trainerview_dice: (a: number) => [number, number, number];
    readonly trainerview_losses: (a: number) => [number, number];
    readonly trainerview_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly trainerview_probability_slice: (a: number, b: number, c: number) => [number, number, number, number];
    readonly trainerview_step: (a: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
