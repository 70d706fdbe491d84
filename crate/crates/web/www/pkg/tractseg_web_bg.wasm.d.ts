/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_phantomview_free: (a: number, b: number) => void;
export const __wbg_trainerview_free: (a: number, b: number) => void;
export const bland_altman_report: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const phantomview_dims: (a: number) => [number, number];
export const phantomview_fa_slice: (a: number, b: number, c: number) => [number, number, number, number];
export const phantomview_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const phantomview_tract_voxels: (a: number) => number;
export const phantomview_truth_slice: (a: number, b: number, c: number) => [number, number, number, number];
export const trainerview_dice: (a: number) => [number, number, number];
export const trainerview_losses: (a: number) => [number, number];
export const trainerview_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const trainerview_probability_slice: (a: number, b: number, c: number) => [number, number, number, number];
export const trainerview_step: (a: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
