use crate::volume_io::LabelVolume;

/// The 13 neighbours of a voxel that precede it in raster order under
/// 26-connectivity.
const BACKWARD: [[isize; 3]; 13] = [
    [-1, -1, -1],
    [-1, -1, 0],
    [-1, -1, 1],
    [-1, 0, -1],
    [-1, 0, 0],
    [-1, 0, 1],
    [-1, 1, -1],
    [-1, 1, 0],
    [-1, 1, 1],
    [0, -1, -1],
    [0, -1, 0],
    [0, -1, 1],
    [0, 0, -1],
];

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Component id (the smallest linear index in the component) of every
/// foreground voxel of a `[Z, Y, X]` mask; `usize::MAX` for background.
pub fn label_components(fg: &[bool], shape: [usize; 3]) -> Vec<usize> {
    let [nz, ny, nx] = shape;
    let mut parent: Vec<usize> = (0..fg.len()).collect();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if !fg[i] {
                    continue;
                }
                for [dz, dy, dx] in BACKWARD {
                    let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                    if zz < 0 || yy < 0 || xx < 0 || yy >= ny as isize || xx >= nx as isize {
                        continue;
                    }
                    let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                    if fg[j] {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        // Keep the smaller index as root so roots are seeds.
                        if a < b {
                            parent[b] = a;
                        } else if b < a {
                            parent[a] = b;
                        }
                    }
                }
            }
        }
    }
    (0..fg.len())
        .map(|i| if fg[i] { find(&mut parent, i) } else { usize::MAX })
        .collect()
}

/// Keeps only the largest 26-connected foreground component (labels > 0);
/// ties go to the component containing the smallest linear index. Labels
/// inside the kept component are unchanged.
pub fn postprocess_largest_component(mask: &LabelVolume) -> LabelVolume {
    let fg: Vec<bool> = mask.labels().iter().map(|&l| l > 0).collect();
    let ids = label_components(&fg, mask.shape());
    let mut size = vec![0usize; fg.len()];
    for &id in ids.iter().filter(|&&id| id != usize::MAX) {
        size[id] += 1;
    }
    // Strictly-greater comparison in increasing seed order breaks ties toward the smallest seed.
    let mut best: Option<usize> = None;
    for (seed, &s) in size.iter().enumerate() {
        if s > 0 && best.is_none_or(|b| s > size[b]) {
            best = Some(seed);
        }
    }
    let labels = mask
        .labels()
        .iter()
        .zip(&ids)
        .map(|(&l, &id)| if Some(id) == best { l } else { 0 })
        .collect();
    LabelVolume::new(mask.shape(), mask.spacing(), labels).expect("subset of a valid mask")
}
