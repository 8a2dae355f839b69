//! Padding episodes into model batches and seeded shuffling.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::corpus::Episode;
use crate::model::Batch;
use crate::tensor::Tensor;

/// Index chunks of `size`, shuffled with `rng` when given.
pub fn batch_order(n: usize, size: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(r) = rng {
        idx.shuffle(r);
    }
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

fn pad(ids: &[u32], len: usize) -> Vec<usize> {
    let mut v: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    v.resize(len, 0);
    v
}

/// Stacks episodes into a [`Batch`], padding sentences and questions with
/// id 0 to the batch maxima. `match_fields > 0` materializes the dense
/// `[B * classes, fields]` match-flag matrix.
pub fn make_batch(episodes: &[&Episode], num_classes: usize, match_fields: usize) -> Batch {
    let slen = episodes
        .iter()
        .flat_map(|e| e.sentences.iter().map(Vec::len))
        .max()
        .unwrap_or(1);
    let qlen = episodes.iter().map(|e| e.question.len()).max().unwrap_or(1);
    let match_flags = (match_fields > 0).then(|| {
        let mut data = vec![0.0; episodes.len() * num_classes * match_fields];
        for (b, e) in episodes.iter().enumerate() {
            for &(c, mask) in &e.match_flags {
                let row = b * num_classes + c as usize;
                for f in 0..match_fields {
                    if mask & (1 << f) != 0 {
                        data[row * match_fields + f] = 1.0;
                    }
                }
            }
        }
        Tensor::matrix(episodes.len() * num_classes, match_fields, data).expect("finite flags")
    });
    Batch {
        sentences: episodes
            .iter()
            .flat_map(|e| e.sentences.iter().map(|s| pad(s, slen)))
            .collect(),
        lengths: episodes.iter().map(|e| e.sentences.len()).collect(),
        questions: episodes.iter().map(|e| pad(&e.question, qlen)).collect(),
        answers: episodes.iter().map(|e| e.answer as usize).collect(),
        tasks: episodes.iter().map(|e| e.task).collect(),
        match_flags,
    }
}

/// Batches over `episodes` in shuffled (or file) order.
pub fn batches<'a>(
    episodes: &'a [Episode],
    size: usize,
    rng: Option<&mut ChaCha8Rng>,
    num_classes: usize,
    match_fields: usize,
) -> impl Iterator<Item = Batch> + 'a {
    batch_order(episodes.len(), size, rng).into_iter().map(move |chunk| {
        let eps: Vec<&Episode> = chunk.iter().map(|&i| &episodes[i]).collect();
        make_batch(&eps, num_classes, match_fields)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn seeded_order_is_a_permutation() {
        let a = batch_order(10, 3, Some(&mut ChaCha8Rng::seed_from_u64(5)));
        let b = batch_order(10, 3, Some(&mut ChaCha8Rng::seed_from_u64(5)));
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(a.last().unwrap().len(), 1);
    }

    #[test]
    fn pads_to_batch_max() {
        let e1 = Episode {
            task: 1,
            sentences: vec![vec![3, 4], vec![5]],
            question: vec![6],
            answer: 0,
            supporting: vec![],
            match_flags: vec![(1, 0b10)],
        };
        let e2 = Episode {
            sentences: vec![vec![7, 8, 9]],
            question: vec![6, 7],
            ..e1.clone()
        };
        let b = make_batch(&[&e1, &e2], 2, 2);
        assert_eq!(b.sentences, vec![vec![3, 4, 0], vec![5, 0, 0], vec![7, 8, 9]]);
        assert_eq!(b.lengths, vec![2, 1]);
        assert_eq!(b.questions[0], vec![6, 0]);
        let f = b.match_flags.unwrap();
        assert_eq!(f.shape(), &[4, 2]);
        assert_eq!(f.row(1), &[0.0, 1.0]);
        assert_eq!(f.row(3), &[0.0, 1.0]);
    }
}
