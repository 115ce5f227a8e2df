//! String-to-id tables for words, chars, gazetteer tags and labels.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNK_WORD: &str = "<unk>";
pub const BOS_WORD: &str = "<s>";
pub const PAD_CHAR: &str = "<pad>";
pub const UNK_CHAR: &str = "<unk>";
pub const NO_TAG: &str = "-";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
    specials: usize,
}

impl Vocab {
    /// `specials` take the first ids; a repeated entry is a data error naming it.
    pub fn new<I, S>(specials: &[&str], items: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            specials: specials.len(),
            ..Vocab::default()
        };
        for s in specials {
            v.push(s.to_string())?;
        }
        for (i, item) in items.into_iter().enumerate() {
            let item = item.into();
            if i < specials.len() && item == specials[i] {
                // files may list the specials themselves
                continue;
            }
            v.push(item)?;
        }
        Ok(v)
    }

    /// Word vocabulary with `<unk>` = 0 and `<s>` = 1.
    pub fn words<I, S>(items: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Vocab::new(&[UNK_WORD, BOS_WORD], items)
    }

    /// Label set without specials.
    pub fn labels<I, S>(items: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Vocab::new(&[], items)
    }

    fn push(&mut self, item: String) -> Result<()> {
        if self.index.contains_key(&item) {
            return Err(Error::data(format!("duplicate entry `{item}`")));
        }
        self.index.insert(item.clone(), self.items.len());
        self.items.push(item);
        Ok(())
    }

    /// Appends `item` if unseen and returns its id.
    pub fn intern(&mut self, item: &str) -> usize {
        if let Some(&id) = self.index.get(item) {
            return id;
        }
        self.index.insert(item.to_string(), self.items.len());
        self.items.push(item.to_string());
        self.items.len() - 1
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn specials(&self) -> usize {
        self.specials
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.specials
    }

    pub fn id(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    /// Id of `item`, or `fallback` when unknown.
    pub fn id_or(&self, item: &str, fallback: usize) -> usize {
        self.id(item).unwrap_or(fallback)
    }

    pub fn item(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let v = Vocab::words(["the", "cat"]).unwrap();
        assert_eq!(v.id(UNK_WORD), Some(0));
        assert_eq!(v.id(BOS_WORD), Some(1));
        assert_eq!(v.id("cat"), Some(3));
        assert_eq!(v.id_or("dog", 0), 0);
        assert!(v.is_special(1) && !v.is_special(2));
    }

    #[test]
    fn listed_specials_are_not_duplicated() {
        let v = Vocab::words(["<unk>", "<s>", "a"]).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.item(2), "a");
    }

    #[test]
    fn duplicates_are_data_errors() {
        assert!(matches!(Vocab::labels(["x", "y", "x"]), Err(Error::Data { .. })));
    }
}
