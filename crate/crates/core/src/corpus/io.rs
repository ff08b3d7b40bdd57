use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;
use serde_json::Value;

use super::{calorie_level_from_label, normalize_text, Interaction, Recipe, RecipeId, UserId};
use crate::error::RowError;
use crate::{Error, Result};

/// Parsed rows plus every row that could not be parsed.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub recipes: Vec<Recipe>,
    pub interactions: Vec<Interaction>,
    pub recipe_errors: Vec<RowError>,
    pub interaction_errors: Vec<RowError>,
}

impl LoadReport {
    pub fn has_errors(&self) -> bool {
        !self.recipe_errors.is_empty() || !self.interaction_errors.is_empty()
    }
}

pub fn load_corpus(recipes_path: &Path, interactions_path: &Path) -> Result<LoadReport> {
    let (recipes, recipe_errors) = load_recipes(recipes_path)?;
    let (interactions, interaction_errors) = load_interactions(interactions_path)?;
    Ok(LoadReport { recipes, interactions, recipe_errors, interaction_errors })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn id_field(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("field {key:?} must be a string or number")),
        None => Err(format!("missing field {key:?}")),
    }
}

fn string_list(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<Vec<String>, String> {
    match obj.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(normalize_text).ok_or_else(|| format!("{key:?} must hold strings")))
            .collect(),
        Some(_) => Err(format!("field {key:?} must be a list")),
        None => Err(format!("missing field {key:?}")),
    }
}

fn count_field(obj: &serde_json::Map<String, Value>, key: &str) -> std::result::Result<Option<usize>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            v.as_u64().map(|n| Some(n as usize)).ok_or_else(|| format!("field {key:?} must be a non-negative integer"))
        }
    }
}

fn parse_recipe(line: &str) -> std::result::Result<Recipe, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("record is not an object")?;
    let recipe_id = id_field(obj, "recipe_id")?;
    let name = obj.get("name").and_then(Value::as_str).map(normalize_text).ok_or("missing string field \"name\"")?;
    let steps = string_list(obj, "steps")?;
    let ingredients = string_list(obj, "ingredients")?;
    if let Some(n) = count_field(obj, "n_steps")? {
        if n != steps.len() {
            return Err(format!("n_steps is {n} but {} steps listed", steps.len()));
        }
    }
    if let Some(n) = count_field(obj, "n_ingredients")? {
        if n != ingredients.len() {
            return Err(format!("n_ingredients is {n} but {} ingredients listed", ingredients.len()));
        }
    }
    let calorie_level = match obj.get("calorie_level") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let label = v.as_u64().ok_or("calorie_level must be 0, 1 or 2")?;
            Some(calorie_level_from_label(label).ok_or_else(|| format!("calorie_level {label} out of range"))?)
        }
    };
    let calories = match obj.get("calories") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let c = v.as_f64().ok_or("calories must be a number")?;
            if !c.is_finite() {
                return Err("calories must be finite".into());
            }
            Some(c)
        }
    };
    if calorie_level.is_none() && calories.is_none() {
        return Err("neither calorie_level nor calories present".into());
    }
    let techniques = match obj.get("techniques") {
        None | Some(Value::Null) => Default::default(),
        Some(_) => string_list(obj, "techniques")?.into_iter().collect(),
    };
    Ok(Recipe { recipe_id: RecipeId(recipe_id), name, steps, ingredients, calorie_level, calories, techniques })
}

/// Reads one JSON recipe record per line. Blank lines are skipped.
pub fn load_recipes(path: &Path) -> Result<(Vec<Recipe>, Vec<RowError>)> {
    let reader = BufReader::new(open(path)?);
    let mut recipes = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_recipe(&line) {
            Ok(r) => recipes.push(r),
            Err(message) => errors.push(RowError { row: i + 1, message }),
        }
    }
    Ok((recipes, errors))
}

fn parse_date(raw: &str) -> std::result::Result<NaiveDate, String> {
    let raw = raw.trim();
    // tolerate a trailing time component on otherwise ISO dates
    let day = match raw.char_indices().nth(10) {
        Some((idx, c)) if c == 'T' || c == ' ' => &raw[..idx],
        _ => raw,
    };
    NaiveDate::parse_from_str(day, "%Y-%m-%d").map_err(|e| format!("bad date {raw:?}: {e}"))
}

fn parse_interaction_json(line: &str) -> std::result::Result<Interaction, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("record is not an object")?;
    let date = obj.get("date").and_then(Value::as_str).ok_or("missing string field \"date\"")?;
    Ok(Interaction {
        user_id: UserId(id_field(obj, "user_id")?),
        recipe_id: RecipeId(id_field(obj, "recipe_id")?),
        date: parse_date(date)?,
    })
}

/// Reads interactions from CSV (by `.csv` extension, header row required,
/// extra columns ignored) or from JSON lines.
pub fn load_interactions(path: &Path) -> Result<(Vec<Interaction>, Vec<RowError>)> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let file = open(path)?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    if is_csv {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
        let headers =
            reader.headers().map_err(|e| Error::Invalid(format!("{}: bad csv header: {e}", path.display())))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(u), Some(r), Some(d)) = (col("user_id"), col("recipe_id"), col("date")) else {
            return Err(Error::Invalid(format!("{}: header must contain user_id, recipe_id and date", path.display())));
        };
        for (i, record) in reader.records().enumerate() {
            // header is row 1
            let row = i + 2;
            let parsed = record.map_err(|e| e.to_string()).and_then(|rec| {
                let field = |idx: usize, name: &str| {
                    rec.get(idx).map(str::trim).filter(|s| !s.is_empty()).ok_or_else(|| format!("missing {name}"))
                };
                Ok(Interaction {
                    user_id: UserId(field(u, "user_id")?.to_string()),
                    recipe_id: RecipeId(field(r, "recipe_id")?.to_string()),
                    date: parse_date(field(d, "date")?)?,
                })
            });
            match parsed {
                Ok(ix) => out.push(ix),
                Err(message) => errors.push(RowError { row, message }),
            }
        }
    } else {
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_interaction_json(&line) {
                Ok(ix) => out.push(ix),
                Err(message) => errors.push(RowError { row: i + 1, message }),
            }
        }
    }
    Ok((out, errors))
}

#[derive(Serialize)]
struct RecipeRecord<'a> {
    recipe_id: &'a str,
    name: &'a str,
    n_steps: usize,
    steps: &'a [String],
    n_ingredients: usize,
    ingredients: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    calorie_level: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calories: Option<f64>,
    techniques: Vec<&'a str>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes recipes in the same record-per-line format [`load_recipes`] reads,
/// with resolved calorie levels and extracted techniques.
pub fn write_recipes(path: &Path, recipes: &[Recipe]) -> Result<()> {
    let mut w = create(path)?;
    for r in recipes {
        let record = RecipeRecord {
            recipe_id: r.recipe_id.as_str(),
            name: &r.name,
            n_steps: r.steps.len(),
            steps: &r.steps,
            n_ingredients: r.ingredients.len(),
            ingredients: &r.ingredients,
            calorie_level: r.calorie_level.map(|l| l.index()),
            calories: r.calories,
            techniques: r.techniques.iter().map(String::as_str).collect(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_interactions(path: &Path, interactions: &[Interaction]) -> Result<()> {
    let mut w = create(path)?;
    for ix in interactions {
        let record = serde_json::json!({
            "user_id": ix.user_id.as_str(),
            "recipe_id": ix.recipe_id.as_str(),
            "date": ix.date.format("%Y-%m-%d").to_string(),
        });
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
