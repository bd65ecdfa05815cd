//! Synthetic person records with planted cross-dataset duplicates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::GroundTruth;
use crate::error::{Error, Result};
use crate::model::{Dataset, Record};

/// Column order of generated datasets.
pub const SCHEMA: [&str; 15] = [
    "first_name",
    "last_name",
    "email",
    "email_domain",
    "address_number",
    "address_location",
    "address_line",
    "city",
    "state",
    "country",
    "zip_base",
    "zip_ext",
    "phone_area_code",
    "phone_exchange_code",
    "phone_line_number",
];

const FIRST: &[&str] = &[
    "James", "Mary", "Robert", "Patricia", "John", "Jennifer", "Michael", "Linda", "David", "Elizabeth", "William",
    "Barbara", "Richard", "Susan", "Joseph", "Jessica", "Thomas", "Sarah", "Charles", "Karen", "Christopher", "Lisa",
    "Daniel", "Nancy", "Matthew", "Betty", "Anthony", "Margaret", "Mark", "Sandra", "Donald", "Ashley", "Steven",
    "Kimberly", "Paul", "Emily", "Andrew", "Donna", "Joshua", "Michelle", "Kenneth", "Carol", "Kevin", "Amanda",
    "Brian", "Dorothy", "George", "Melissa", "Timothy", "Deborah", "Ronald", "Stephanie", "Edward", "Rebecca",
    "Jason", "Sharon", "Jeffrey", "Laura", "Ryan", "Cynthia", "Jacob", "Kathleen", "Gary", "Amy", "Nicholas",
    "Angela", "Eric", "Shirley", "Jonathan", "Anna", "Stephen", "Brenda", "Larry", "Pamela", "Justin", "Emma",
    "Scott", "Nicole", "Brandon", "Helen", "Benjamin", "Samantha", "Samuel", "Katherine", "Gregory", "Christine",
    "Alexander", "Debra", "Frank", "Rachel", "Patrick", "Carolyn", "Raymond", "Janet", "Jack", "Catherine",
    "Dennis", "Maria", "Jerry", "Heather", "Tyler", "Diane", "Aaron", "Ruth", "Jose", "Julie", "Adam", "Olivia",
    "Nathan", "Joyce", "Henry", "Virginia", "Douglas", "Victoria", "Zachary", "Kelly", "Peter", "Lauren", "Kyle",
    "Christina", "Ethan", "Joan", "Walter", "Evelyn", "Noah", "Judith", "Jeremy", "Megan", "Christian", "Andrea",
];

const LAST: &[&str] = &[
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis", "Rodriguez", "Martinez",
    "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Thomas", "Taylor", "Moore", "Jackson", "Martin", "Lee",
    "Perez", "Thompson", "White", "Harris", "Sanchez", "Clark", "Ramirez", "Lewis", "Robinson", "Walker", "Young",
    "Allen", "King", "Wright", "Scott", "Torres", "Nguyen", "Hill", "Flores", "Green", "Adams", "Nelson", "Baker",
    "Hall", "Rivera", "Campbell", "Mitchell", "Carter", "Roberts", "Gomez", "Phillips", "Evans", "Turner", "Diaz",
    "Parker", "Cruz", "Edwards", "Collins", "Reyes", "Stewart", "Morris", "Morales", "Murphy", "Cook", "Rogers",
    "Gutierrez", "Ortiz", "Morgan", "Cooper", "Peterson", "Bailey", "Reed", "Kelly", "Howard", "Ramos", "Kim",
    "Cox", "Ward", "Richardson", "Watson", "Brooks", "Chavez", "Wood", "James", "Bennett", "Gray", "Mendoza",
    "Ruiz", "Hughes", "Price", "Alvarez", "Castillo", "Sanders", "Patel", "Myers", "Long", "Ross", "Foster",
    "Jimenez", "Powell", "Jenkins", "Perry", "Russell", "Sullivan", "Bell", "Coleman", "Butler", "Henderson",
    "Barnes", "Gonzales", "Fisher", "Vasquez", "Simmons", "Romero", "Jordan", "Patterson", "Alexander", "Hamilton",
    "Graham", "Reynolds", "Griffin", "Wallace", "Moreno", "West", "Cole", "Hayes", "Bryant", "Herrera", "Gibson",
];

const STREETS: &[&str] = &[
    "Sunset", "Maple", "Oak", "Cedar", "Pine", "Elm", "Washington", "Lake", "Hill", "Park", "Main", "Church",
    "Highland", "Madison", "Jefferson", "Lincoln", "Franklin", "Willow", "Meadow", "River", "Spring", "Forest",
    "Valley", "Ridge", "Sycamore", "Walnut", "Chestnut", "Laurel", "Magnolia", "Dogwood", "Hickory", "Prospect",
    "Jackson", "Adams", "Monroe", "Harrison", "Cherry", "Poplar", "Birch", "Aspen", "Colonial", "Orchard",
    "Sherwood", "Summit", "Fairview", "Greenwood", "Lakeview", "Riverside", "Woodland", "Broad",
];

const STREET_TYPES: &[(&str, &str)] = &[
    ("Street", "St"),
    ("Avenue", "Ave"),
    ("Boulevard", "Blvd"),
    ("Road", "Rd"),
    ("Drive", "Dr"),
    ("Lane", "Ln"),
    ("Court", "Ct"),
    ("Place", "Pl"),
];

const CITIES: &[(&str, &str)] = &[
    ("Los Angeles", "CA"), ("San Diego", "CA"), ("Sacramento", "CA"), ("Fresno", "CA"), ("Houston", "TX"),
    ("Dallas", "TX"), ("Austin", "TX"), ("El Paso", "TX"), ("Phoenix", "AZ"), ("Tucson", "AZ"), ("Chicago", "IL"),
    ("Springfield", "IL"), ("Philadelphia", "PA"), ("Pittsburgh", "PA"), ("Jacksonville", "FL"), ("Miami", "FL"),
    ("Tampa", "FL"), ("Orlando", "FL"), ("Columbus", "OH"), ("Cleveland", "OH"), ("Charlotte", "NC"),
    ("Raleigh", "NC"), ("Durham", "NC"), ("Greensboro", "NC"), ("Indianapolis", "IN"), ("Seattle", "WA"),
    ("Spokane", "WA"), ("Denver", "CO"), ("Boston", "MA"), ("Nashville", "TN"), ("Memphis", "TN"),
    ("Portland", "OR"), ("Las Vegas", "NV"), ("Detroit", "MI"), ("Baltimore", "MD"), ("Milwaukee", "WI"),
    ("Albuquerque", "NM"), ("Atlanta", "GA"), ("Omaha", "NE"), ("Minneapolis", "MN"),
];

const DOMAINS: &[&str] = &[
    "gmail.com", "yahoo.com", "outlook.com", "hotmail.com", "aol.com", "icloud.com", "mail.com", "proton.me",
    "comcast.net", "verizon.net",
];

/// Parameters of a generated pair of datasets.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Records per dataset.
    pub n: usize,
    /// Entities present in both datasets.
    pub planted: usize,
    /// Per-field probability that a planted copy receives a typo.
    pub typo_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n: usize, planted: usize, typo_rate: f64, seed: u64) -> Self {
        SynthConfig { n, planted, typo_rate, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.planted > self.n {
            return Err(Error::Config(format!("planted {} exceeds n {}", self.planted, self.n)));
        }
        if !(0.0..=1.0).contains(&self.typo_rate) {
            return Err(Error::Config(format!("typo rate {} outside [0, 1]", self.typo_rate)));
        }
        Ok(())
    }
}

/// Two datasets and the entity behind every record.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub left: Dataset,
    pub right: Dataset,
    pub truth: GroundTruth,
}

/// A fresh random person record.
pub fn random_person<R: Rng + ?Sized>(id: String, rng: &mut R) -> Record {
    let first = *FIRST.choose(rng).unwrap();
    let last = *LAST.choose(rng).unwrap();
    let domain = *DOMAINS.choose(rng).unwrap();
    let sep = ["", ".", "_"].choose(rng).unwrap();
    let suffix = if rng.gen_bool(0.6) { rng.gen_range(1..1000).to_string() } else { String::new() };
    let email = format!("{}{sep}{}{suffix}@{domain}", first.to_lowercase(), last.to_lowercase());
    let (city, state) = *CITIES.choose(rng).unwrap();
    let (street_type, _) = *STREET_TYPES.choose(rng).unwrap();
    let line = if rng.gen_bool(0.3) { format!("Apt {}", rng.gen_range(1..400)) } else { String::new() };
    Record::new(id)
        .with_field("first_name", first)
        .with_field("last_name", last)
        .with_field("email", email)
        .with_field("email_domain", domain)
        .with_field("address_number", rng.gen_range(1..10_000).to_string())
        .with_field("address_location", format!("{} {street_type}", STREETS.choose(rng).unwrap()))
        .with_field("address_line", line)
        .with_field("city", city)
        .with_field("state", state)
        .with_field("country", "US")
        .with_field("zip_base", format!("{:05}", rng.gen_range(10_000..100_000)))
        .with_field("zip_ext", format!("{:04}", rng.gen_range(0..10_000)))
        .with_field("phone_area_code", rng.gen_range(201..990).to_string())
        .with_field("phone_exchange_code", rng.gen_range(200..1000).to_string())
        .with_field("phone_line_number", format!("{:04}", rng.gen_range(0..10_000)))
}

/// Apply one random typo or style change to `value`.
pub fn typo<R: Rng + ?Sized>(value: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = value.chars().collect();
    if chars.is_empty() {
        return String::new();
    }
    for (long, short) in STREET_TYPES {
        if rng.gen_bool(0.5) {
            if let Some(stem) = value.strip_suffix(long) {
                return format!("{stem}{short}");
            }
            if let Some(stem) = value.strip_suffix(short) {
                return format!("{stem}{long}");
            }
        }
    }
    let i = rng.gen_range(0..chars.len());
    match rng.gen_range(0..5) {
        0 if chars.len() > 1 => {
            let j = if i + 1 < chars.len() { i + 1 } else { i - 1 };
            chars.swap(i, j);
        }
        1 if chars.len() > 1 => {
            chars.remove(i);
        }
        2 => chars.insert(i, chars[i]),
        3 => {
            // Style change: hyphenate or join words, which normalization keeps distinct.
            if let Some(p) = chars.iter().position(|c| *c == ' ') {
                if rng.gen_bool(0.5) {
                    chars[p] = '-';
                } else {
                    chars.remove(p);
                }
            } else {
                chars.insert(i, ' ');
            }
        }
        _ => {
            return if rng.gen_bool(0.5) { value.to_uppercase() } else { value.to_lowercase() };
        }
    }
    chars.into_iter().collect()
}

/// Copy of `record` where each field independently gets a typo with
/// probability `rate`.
pub fn perturb<R: Rng + ?Sized>(record: &Record, id: String, rate: f64, rng: &mut R) -> Record {
    let fields: BTreeMap<String, String> = record
        .fields
        .iter()
        .map(|(k, v)| {
            let v = if rate > 0.0 && rng.gen_bool(rate) { typo(v, rng) } else { v.clone() };
            (k.clone(), v)
        })
        .collect();
    Record { id, fields }
}

/// Generate two datasets of `n` records sharing exactly `planted` entities.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth = GroundTruth::default();
    let mut left = Vec::with_capacity(cfg.n);
    let mut right = Vec::with_capacity(cfg.n);
    let mut entity = 0usize;
    for i in 0..cfg.n {
        let base = random_person(String::new(), &mut rng);
        let ent = format!("e{entity:07}");
        entity += 1;
        if i < cfg.planted {
            right.push((perturb(&base, String::new(), cfg.typo_rate, &mut rng), ent.clone()));
        }
        left.push((base, ent));
    }
    for _ in cfg.planted..cfg.n {
        right.push((random_person(String::new(), &mut rng), format!("e{entity:07}")));
        entity += 1;
    }
    left.shuffle(&mut rng);
    right.shuffle(&mut rng);
    let label = |side: &str, rows: Vec<(Record, String)>, truth: &mut GroundTruth| -> Vec<Record> {
        rows.into_iter()
            .enumerate()
            .map(|(i, (mut r, ent))| {
                r.id = format!("{side}{i:07}");
                truth.insert_left_or_right(side == "a", r.id.clone(), ent);
                r
            })
            .collect()
    };
    let left = label("a", left, &mut truth);
    let right = label("b", right, &mut truth);
    Ok(SynthOutput { left: Dataset::new(left)?, right: Dataset::new(right)?, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_pairs_in_truth() {
        let out = generate(&SynthConfig::new(1000, 100, 0.1, 1)).unwrap();
        assert_eq!(out.left.len(), 1000);
        assert_eq!(out.right.len(), 1000);
        assert_eq!(out.truth.true_pairs().len(), 100);
        for r in out.left.records() {
            assert_eq!(r.fields.len(), SCHEMA.len());
        }
    }

    #[test]
    fn zero_typo_rate_copies_exactly() {
        let out = generate(&SynthConfig::new(200, 50, 0.0, 2)).unwrap();
        for (a, b) in out.truth.true_pairs() {
            assert_eq!(out.left.get(&a).unwrap().fields, out.right.get(&b).unwrap().fields);
        }
    }

    #[test]
    fn no_planted_means_empty_truth_and_bad_rates_fail() {
        let out = generate(&SynthConfig::new(100, 0, 0.2, 3)).unwrap();
        assert!(out.truth.true_pairs().is_empty());
        assert!(generate(&SynthConfig::new(10, 11, 0.1, 0)).is_err());
        assert!(generate(&SynthConfig::new(10, 1, 1.5, 0)).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&SynthConfig::new(50, 5, 0.3, 9)).unwrap();
        let b = generate(&SynthConfig::new(50, 5, 0.3, 9)).unwrap();
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);
    }

    #[test]
    fn typo_changes_nonempty_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(typo("", &mut rng), "");
        let changed = (0..100).filter(|_| typo("Sunset Blvd", &mut rng) != "Sunset Blvd").count();
        assert!(changed > 90);
    }
}
