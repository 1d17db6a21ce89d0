use super::{ConvSpec, Coord, CoordSet};
use crate::error::{Error, Result};

/// Kernel offsets in lexicographic `(dz, dy, dx)` order, returned as `[dx, dy, dz]`.
pub fn kernel_offsets(kernel_size: usize) -> Vec<Coord> {
    let r = (kernel_size / 2) as i32;
    let mut out = Vec::with_capacity(kernel_size.pow(3));
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

/// Input/output row pairs of a convolution, grouped three ways: by kernel
/// offset (the canonical form), by output row and by input row. The two
/// row-major views let forward and backward passes accumulate each row in a
/// fixed order regardless of how work is split across threads.
#[derive(Clone, Debug)]
pub struct KernelMap {
    volume: usize,
    n_in: usize,
    n_out: usize,
    per_offset: Vec<Vec<(u32, u32)>>,
    out_ptr: Vec<usize>,
    out_entries: Vec<(u32, u32)>,
    in_ptr: Vec<usize>,
    in_entries: Vec<(u32, u32)>,
}

impl KernelMap {
    /// Assembles a map from `(offset, input row, output row)` triples listed in
    /// output-row-major, offset-minor order.
    fn from_triples(volume: usize, n_in: usize, n_out: usize, triples: Vec<(u32, u32, u32)>) -> Self {
        let mut per_offset = vec![Vec::new(); volume];
        let mut out_ptr = vec![0usize; n_out + 1];
        let mut in_ptr = vec![0usize; n_in + 1];
        for &(k, i, o) in &triples {
            per_offset[k as usize].push((i, o));
            out_ptr[o as usize + 1] += 1;
            in_ptr[i as usize + 1] += 1;
        }
        for r in 0..n_out {
            out_ptr[r + 1] += out_ptr[r];
        }
        for r in 0..n_in {
            in_ptr[r + 1] += in_ptr[r];
        }
        let out_entries = triples.iter().map(|&(k, i, _)| (k, i)).collect();

        let mut fill = in_ptr.clone();
        let mut in_entries = vec![(0u32, 0u32); triples.len()];
        for &(k, i, o) in &triples {
            let slot = &mut fill[i as usize];
            in_entries[*slot] = (k, o);
            *slot += 1;
        }
        // Within each input row, order by (offset, output).
        for r in 0..n_in {
            in_entries[in_ptr[r]..in_ptr[r + 1]].sort_unstable();
        }

        Self { volume, n_in, n_out, per_offset, out_ptr, out_entries, in_ptr, in_entries }
    }

    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// `(input row, output row)` pairs of kernel offset `k`.
    pub fn pairs(&self, k: usize) -> &[(u32, u32)] {
        &self.per_offset[k]
    }

    pub fn pair_count(&self) -> usize {
        self.out_entries.len()
    }

    /// `(offset, input row)` entries contributing to output row `o`.
    pub fn by_output(&self, o: usize) -> &[(u32, u32)] {
        &self.out_entries[self.out_ptr[o]..self.out_ptr[o + 1]]
    }

    /// `(offset, output row)` entries fed by input row `i`.
    pub fn by_input(&self, i: usize) -> &[(u32, u32)] {
        &self.in_entries[self.in_ptr[i]..self.in_ptr[i + 1]]
    }
}

/// Builds the kernel map between `input` and `output` coordinates.
///
/// With `t_in`/`t_out` the lattice strides and `d` a kernel offset:
/// * regular conv (`t_out = t_in * stride`): input `i = o + d * t_in`;
/// * transposed conv (`t_in = t_out * stride`): input `c = o - d * t_out`.
///
/// The transposed rule is the regular rule read backwards (fine `o` equals
/// coarse `c` plus `d` times the fine stride), so a transposed convolution with
/// channel-transposed weights is the exact adjoint of the regular one.
pub fn build_kernel_map(input: &CoordSet, output: &CoordSet, spec: &ConvSpec) -> Result<KernelMap> {
    spec.validate()?;
    let offsets = kernel_offsets(spec.kernel_size);
    let (step, sign) = if spec.transposed {
        if input.stride() != output.stride() * spec.stride {
            return Err(Error::StrideMismatch(format!(
                "transposed conv from stride {} with factor {} cannot target stride {}",
                input.stride(),
                spec.stride,
                output.stride()
            )));
        }
        (output.stride(), -1)
    } else {
        if output.stride() != input.stride() * spec.stride {
            return Err(Error::StrideMismatch(format!(
                "conv from stride {} with factor {} cannot produce stride {}",
                input.stride(),
                spec.stride,
                output.stride()
            )));
        }
        (input.stride(), 1)
    };

    let mut triples = Vec::new();
    for (o, oc) in output.coords().iter().enumerate() {
        for (k, d) in offsets.iter().enumerate() {
            let c = [oc[0] + sign * d[0] * step, oc[1] + sign * d[1] * step, oc[2] + sign * d[2] * step];
            if let Some(i) = input.row(&c) {
                triples.push((k as u32, i as u32, o as u32));
            }
        }
    }
    Ok(KernelMap::from_triples(offsets.len(), input.len(), output.len(), triples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(coords: &[Coord], stride: i32) -> CoordSet {
        CoordSet::new(coords.iter().copied(), stride).unwrap()
    }

    /// Brute force: scan all (output, input) pairs and test the offset rule.
    fn brute_force(input: &CoordSet, output: &CoordSet, spec: &ConvSpec) -> BTreeSet<(usize, usize, usize)> {
        let offsets = kernel_offsets(spec.kernel_size);
        let mut out = BTreeSet::new();
        for (o, oc) in output.coords().iter().enumerate() {
            for (i, ic) in input.coords().iter().enumerate() {
                for (k, d) in offsets.iter().enumerate() {
                    let hit = if spec.transposed {
                        (0..3).all(|a| oc[a] == ic[a] + d[a] * output.stride())
                    } else {
                        (0..3).all(|a| ic[a] == oc[a] + d[a] * input.stride())
                    };
                    if hit {
                        out.insert((k, i, o));
                    }
                }
            }
        }
        out
    }

    fn collect(map: &KernelMap) -> BTreeSet<(usize, usize, usize)> {
        (0..map.volume()).flat_map(|k| map.pairs(k).iter().map(move |&(i, o)| (k, i as usize, o as usize))).collect()
    }

    #[test]
    fn offsets_are_lexicographic_in_zyx() {
        let o = kernel_offsets(3);
        assert_eq!(o.len(), 27);
        assert_eq!(o[0], [-1, -1, -1]);
        assert_eq!(o[1], [0, -1, -1]);
        assert_eq!(o[3], [-1, 0, -1]);
        assert_eq!(o[13], [0, 0, 0]);
    }

    #[test]
    fn single_coordinate_hits_center_only() {
        let s = set(&[[4, 4, 4]], 1);
        let map = build_kernel_map(&s, &s, &ConvSpec::new(3, 1, 1, 1)).unwrap();
        assert_eq!(map.pair_count(), 1);
        assert_eq!(map.pairs(13), &[(0, 0)]);
    }

    #[test]
    fn two_neighbors_give_four_pairs() {
        let s = set(&[[0, 0, 0], [1, 0, 0]], 1);
        let spec = ConvSpec::new(3, 1, 1, 1);
        let map = build_kernel_map(&s, &s, &spec).unwrap();
        assert_eq!(map.pair_count(), 4);
        assert_eq!(collect(&map), brute_force(&s, &s, &spec));
    }

    #[test]
    fn empty_output_gives_empty_map() {
        let s = set(&[[0, 0, 0]], 1);
        let map = build_kernel_map(&s, &CoordSet::empty(1), &ConvSpec::new(3, 1, 1, 1)).unwrap();
        assert_eq!(map.pair_count(), 0);
    }

    #[test]
    fn stride_mismatch_is_reported() {
        let fine = set(&[[0, 0, 0]], 1);
        let r = build_kernel_map(&fine, &fine, &ConvSpec::new(3, 2, 1, 1));
        assert!(matches!(r, Err(Error::StrideMismatch(_))));
        let r = build_kernel_map(&fine, &fine, &ConvSpec::transposed(3, 2, 1, 1));
        assert!(matches!(r, Err(Error::StrideMismatch(_))));
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = rng.gen_range(1..40);
            let coords: Vec<Coord> =
                (0..n).map(|_| [rng.gen_range(0..8), rng.gen_range(0..8), rng.gen_range(0..8)]).collect();
            let fine = set(&coords, 1);
            let coarse = fine.downsample(2);
            let k = [3, 5][trial % 2];
            let spec = ConvSpec::new(k, 2, 1, 1);
            let map = build_kernel_map(&fine, &coarse, &spec).unwrap();
            assert_eq!(collect(&map), brute_force(&fine, &coarse, &spec));

            let tspec = ConvSpec::transposed(k, 2, 1, 1);
            let tmap = build_kernel_map(&coarse, &fine, &tspec).unwrap();
            assert_eq!(collect(&tmap), brute_force(&coarse, &fine, &tspec));
            // Transposed map is the regular map with rows swapped.
            let swapped: BTreeSet<_> = collect(&map).into_iter().map(|(k, i, o)| (k, o, i)).collect();
            assert_eq!(collect(&tmap), swapped);
        }
    }

    #[test]
    fn row_views_agree_with_offset_view() {
        let s = set(&[[0, 0, 0], [1, 0, 0], [1, 1, 0], [3, 3, 3]], 1);
        let map = build_kernel_map(&s, &s, &ConvSpec::new(3, 1, 1, 1)).unwrap();
        let mut from_out = BTreeSet::new();
        for o in 0..map.n_out() {
            for &(k, i) in map.by_output(o) {
                from_out.insert((k as usize, i as usize, o));
            }
        }
        let mut from_in = BTreeSet::new();
        for i in 0..map.n_in() {
            for &(k, o) in map.by_input(i) {
                from_in.insert((k as usize, i, o as usize));
            }
        }
        assert_eq!(from_out, collect(&map));
        assert_eq!(from_in, collect(&map));
    }
}
