//! Seeded synthetic catalogs with recoverable ground truth.
//!
//! Every user draws a latent genre-affinity vector from a Dirichlet
//! distribution, optionally pulled toward a demographic prototype: the mean
//! of a per-gender and a per-age-bucket Dirichlet draw, so the demographic
//! signal is additive in gender and age. A movie's affinity for a user is the mean affinity
//! over its genres, scaled so the user's favourite genre scores 1.
//! Interactions are sampled without replacement with weight
//! `popularity * exp(affinity_strength * affinity)`, and ratings rise with
//! affinity only, so a one-genre catalog has no rating structure at all.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{ActivityTrait, Catalog, CatalogError, Gender, Interaction, Movie, MovieId, User, UserId, ML1M_GENRES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub movies: usize,
    pub genres: Vec<String>,
    /// Dirichlet concentration of per-user affinities; small is peaky.
    pub concentration: f64,
    pub interactions: usize,
    /// Weight in [0, 1] of the demographic prototype in each user's
    /// affinity vector.
    pub demographic_correlation: f64,
    /// How strongly affinity drives which movies a user interacts with.
    pub affinity_strength: f64,
    /// Spread of the movie popularity distribution.
    pub popularity_skew: f64,
    /// Rating noise standard deviation.
    pub rating_noise: f64,
    /// Log-normal spread of per-user interaction counts; 0 gives every user
    /// the same count.
    pub activity_dispersion: f64,
    /// Floor on interactions per user.
    pub min_per_user: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 200,
            movies: 300,
            genres: ML1M_GENRES[..8].iter().map(|s| s.to_string()).collect(),
            concentration: 0.3,
            interactions: 6000,
            demographic_correlation: 0.9,
            affinity_strength: 5.0,
            popularity_skew: 0.5,
            rating_noise: 0.7,
            activity_dispersion: 1.0,
            min_per_user: 5,
        }
    }
}

/// The generator's latent variables, kept for test oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub genres: Vec<String>,
    pub user_affinity: BTreeMap<UserId, Vec<f64>>,
    pub movie_quality: BTreeMap<MovieId, f64>,
    pub movie_popularity: BTreeMap<MovieId, f64>,
}

impl GroundTruth {
    /// Affinity of `user` for a set of genres in [0, 1]; 1 means every
    /// genre is the user's favourite.
    pub fn affinity(&self, user: UserId, genres: &[String]) -> f64 {
        let Some(a) = self.user_affinity.get(&user) else { return 0.0 };
        let idx: Vec<usize> = genres.iter().filter_map(|g| self.genres.iter().position(|x| x == g)).collect();
        if idx.is_empty() {
            return 0.0;
        }
        let top = a.iter().copied().fold(0.0, f64::max);
        if top <= 0.0 {
            return 0.0;
        }
        idx.iter().map(|&i| a[i]).sum::<f64>() / idx.len() as f64 / top
    }

    /// Genre indices ordered by descending affinity for `user`.
    pub fn ranked_genres(&self, user: UserId) -> Vec<usize> {
        let a = &self.user_affinity[&user];
        let mut idx: Vec<usize> = (0..a.len()).collect();
        idx.sort_by(|&x, &y| a[y].total_cmp(&a[x]).then(x.cmp(&y)));
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCatalog {
    pub catalog: Catalog,
    pub truth: GroundTruth,
}

const AGE_BUCKETS: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];
const DIRECTORS_PER_GENRE: usize = 4;
const ACTOR_POOL: usize = 60;

fn dirichlet(rng: &mut ChaCha8Rng, alphas: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = alphas.iter().map(|&a| Gamma::new(a.max(1e-3), 1.0).expect("valid gamma").sample(rng).max(1e-12)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCatalog, CatalogError> {
    if spec.users == 0 || spec.movies == 0 {
        return Err(CatalogError::Synthetic("users and movies must be positive".into()));
    }
    if spec.genres.is_empty() {
        return Err(CatalogError::Synthetic("genre vocabulary is empty".into()));
    }
    if spec.interactions > spec.users * spec.movies {
        return Err(CatalogError::Synthetic(format!("{} interactions exceed the {}x{} grid", spec.interactions, spec.users, spec.movies)));
    }
    if spec.concentration.is_nan() || spec.concentration <= 0.0 || !(0.0..=1.0).contains(&spec.demographic_correlation) {
        return Err(CatalogError::Synthetic("concentration must be > 0 and correlation in [0, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let n_genres = spec.genres.len();

    // Earlier genres are broadly more liked and more common.
    let base: Vec<f64> = (0..n_genres).map(|i| 1.0 / ((i + 1) as f64).sqrt()).collect();
    let base_sum: f64 = base.iter().sum();
    let alphas: Vec<f64> = base.iter().map(|b| spec.concentration * n_genres as f64 * b / base_sum).collect();

    let mut movies = Vec::with_capacity(spec.movies);
    let mut quality = BTreeMap::new();
    let mut popularity = BTreeMap::new();
    let genre_pick: Vec<usize> = (0..n_genres).collect();
    for i in 0..spec.movies {
        let id = MovieId(i as u32 + 1);
        let n_g = rng.random_range(1..=3.min(n_genres));
        let mut gs: Vec<usize> = Vec::with_capacity(n_g);
        while gs.len() < n_g {
            let g = *genre_pick.choose_weighted(&mut rng, |&g| base[g]).unwrap();
            if !gs.contains(&g) {
                gs.push(g);
            }
        }
        gs.sort_unstable();
        let q: f64 = std_normal.sample(&mut rng);
        let pop = (spec.popularity_skew * q + 0.5 * std_normal.sample(&mut rng)).exp();
        let imdb = ((6.2 + 1.1 * q + 0.3 * std_normal.sample(&mut rng)).clamp(1.0, 9.8) * 10.0).round() / 10.0;
        let year = rng.random_range(1930..=2000);
        let date = NaiveDate::from_ymd_opt(year, rng.random_range(1..=12), rng.random_range(1..=28)).unwrap();
        let names: Vec<String> = gs.iter().map(|&g| spec.genres[g].clone()).collect();
        let main = gs[0];
        let director = format!("Director {}-{}", spec.genres[main], rng.random_range(0..DIRECTORS_PER_GENRE));
        let mut actors: Vec<String> = Vec::new();
        while actors.len() < 3 {
            let a = format!("Actor {}", rng.random_range(0..ACTOR_POOL));
            if !actors.contains(&a) {
                actors.push(a);
            }
        }
        let mut m = Movie::new(id, format!("Synthetic Movie {} ({year})", id.0), names.clone());
        m.overview = Some(format!("A {} story, number {} in the synthetic catalog.", names.join(" and ").to_lowercase(), id.0));
        m.imdb_rating = Some(imdb);
        m.vote_count = Some((pop * 500.0).round() as u64);
        m.release_date = Some(date);
        m.directors = vec![director];
        m.actors = actors;
        m.poster_ref = Some(format!("synthetic/posters/{}/{}.jpg", id.0, names.join("_")));
        quality.insert(id, q);
        popularity.insert(id, pop);
        movies.push(m);
    }

    let gender_protos: Vec<Vec<f64>> = (0..2).map(|_| dirichlet(&mut rng, &alphas)).collect();
    let age_protos: Vec<Vec<f64>> = (0..AGE_BUCKETS.len()).map(|_| dirichlet(&mut rng, &alphas)).collect();
    let mut users = Vec::with_capacity(spec.users);
    let mut affinity = BTreeMap::new();
    for u in 0..spec.users {
        let id = UserId(u as u32 + 1);
        let gender = if rng.random_bool(0.5) { Gender::M } else { Gender::F };
        let age = *AGE_BUCKETS.choose(&mut rng).unwrap();
        let own = dirichlet(&mut rng, &alphas);
        let gp = &gender_protos[matches!(gender, Gender::F) as usize];
        let ap = &age_protos[AGE_BUCKETS.iter().position(|&b| b == age).unwrap()];
        let proto: Vec<f64> = gp.iter().zip(ap).map(|(g, a)| 0.5 * (g + a)).collect();
        let rho = spec.demographic_correlation;
        let a: Vec<f64> = own.iter().zip(proto).map(|(o, p)| rho * p + (1.0 - rho) * o).collect();
        users.push(User {
            user_id: id,
            gender,
            age,
            occupation: rng.random_range(0..21),
            zip: format!("{:05}", rng.random_range(0..100_000)),
            activity_trait: ActivityTrait::Medium,
        });
        affinity.insert(id, a);
    }

    let truth = GroundTruth { genres: spec.genres.clone(), user_affinity: affinity, movie_quality: quality, movie_popularity: popularity };

    let rating_noise = Normal::new(0.0, spec.rating_noise.max(0.0)).unwrap();
    let counts = allocate_counts(&mut rng, spec);
    let mut interactions = Vec::with_capacity(spec.interactions);
    let mut order: Vec<usize> = (0..spec.movies).collect();
    for (ui, user) in users.iter().enumerate() {
        let n = counts[ui];
        if n == 0 {
            continue;
        }
        let aff: Vec<f64> = movies.iter().map(|m| truth.affinity(user.user_id, &m.genres)).collect();
        // Weighted sampling without replacement via exponential keys.
        let keys: Vec<f64> = (0..spec.movies)
            .map(|j| {
                let w = truth.movie_popularity[&movies[j].movie_id] * (spec.affinity_strength * aff[j]).exp();
                let r: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                r.ln() / w
            })
            .collect();
        order.sort_by(|&x, &y| keys[y].total_cmp(&keys[x]).then(x.cmp(&y)));
        let mut picked: Vec<usize> = order[..n].to_vec();
        picked.shuffle(&mut rng);
        let mut ts = 956_703_932 + rng.random_range(0..10_000_000i64);
        for j in picked {
            ts += rng.random_range(60..86_400);
            let raw = 1.5 + 3.5 * aff[j] + rating_noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, 5.0) as u8;
            interactions.push(Interaction { user_id: user.user_id, movie_id: movies[j].movie_id, rating, timestamp: ts });
        }
    }

    let catalog = Catalog::new(movies, users, interactions)?;
    Ok(SyntheticCatalog { catalog, truth })
}

/// Splits `spec.interactions` over users: log-normal weights, a per-user
/// floor, and a cap at the catalog size. Largest remainders absorb rounding.
fn allocate_counts(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<usize> {
    let n = spec.users;
    let total = spec.interactions;
    let floor = spec.min_per_user.min(total / n).min(spec.movies);
    let noise = Normal::new(0.0, spec.activity_dispersion.max(0.0)).unwrap();
    let w: Vec<f64> = (0..n).map(|_| noise.sample(rng).exp()).collect();
    let wsum: f64 = w.iter().sum();
    let free = (total - floor * n) as f64;
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    let mut frac: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, wi) in w.iter().enumerate() {
        let exact = free * wi / wsum;
        counts.push((floor + exact.floor() as usize).min(spec.movies));
        frac.push((exact - exact.floor(), i));
    }
    frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total.saturating_sub(counts.iter().sum());
    // Round-robin over users by descending remainder until the total is met.
    while left > 0 {
        let before = left;
        for &(_, i) in &frac {
            if left == 0 {
                break;
            }
            if counts[i] < spec.movies {
                counts[i] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { users: 30, movies: 40, interactions: 400, ..Default::default() }
    }

    #[test]
    fn same_seed_same_catalog() {
        let a = generate_synthetic(&small(), 7).unwrap();
        let b = generate_synthetic(&small(), 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_synthetic(&small(), 8).unwrap();
        assert_ne!(a.catalog, c.catalog);
    }

    #[test]
    fn too_many_interactions_rejected() {
        let spec = SyntheticSpec { users: 2, movies: 3, interactions: 7, ..Default::default() };
        assert!(matches!(generate_synthetic(&spec, 1), Err(CatalogError::Synthetic(_))));
    }

    #[test]
    fn counts_match_spec() {
        let s = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(s.catalog.num_users(), 30);
        assert_eq!(s.catalog.num_movies(), 40);
        assert_eq!(s.catalog.interactions().len(), 400);
    }

    #[test]
    fn single_genre_has_uniform_affinity() {
        let spec = SyntheticSpec { genres: vec!["Drama".into()], ..small() };
        let s = generate_synthetic(&spec, 5).unwrap();
        for u in s.catalog.users() {
            assert_eq!(s.truth.affinity(u.user_id, &["Drama".to_string()]), 1.0);
        }
    }
}
