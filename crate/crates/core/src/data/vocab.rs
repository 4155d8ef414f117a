use std::collections::HashMap;

/// Bijective name <-> id maps for entities and relations. Ids are dense and
/// assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = index.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_owned());
    index.insert(name.to_owned(), id);
    id
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vocabulary from id-ordered name lists.
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self, String> {
        let mut vocab = Vocabulary::new();
        for e in &entities {
            if vocab.entity_index.contains_key(e) {
                return Err(format!("duplicate entity name `{e}`"));
            }
            vocab.add_entity(e);
        }
        for r in &relations {
            if vocab.relation_index.contains_key(r) {
                return Err(format!("duplicate relation name `{r}`"));
            }
            vocab.add_relation(r);
        }
        Ok(vocab)
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        intern(&mut self.entities, &mut self.entity_index, name)
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        intern(&mut self.relations, &mut self.relation_index, name)
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }
}
