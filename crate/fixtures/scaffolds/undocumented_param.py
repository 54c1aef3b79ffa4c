def get_directed_movie_count(director_name: str, year: int) -> int:
    '''
    Get the number of movies directed by a specific director.

    Parameters:
        name (str): The full name of the director whose films to count.

    Returns:
        int: The number of movies directed by the specified director.
    '''
    # Function logic goes here

if __name__ == "__main__":
    number_of_movies_directed = get_directed_movie_count(director_name="Sofia Coppola")
    print("Number of movies directed by Sofia Coppola:", number_of_movies_directed)
